//! Ground-truth simulators and environment-factor schedules.

pub mod diffdrive;
pub mod msd;
pub mod quad;
pub mod schedule;

pub use diffdrive::{DiffDriveParams, PidGains, PidState, NON_SLIPPERY, SLIPPERY};
pub use msd::MsdParams;
pub use quad::QuadParams;
pub use schedule::{EnvSampler, EnvSchedule, Region};

use serde::{Deserialize, Serialize};

use crate::numerics::NumericsError;
use crate::platform::Platform;
use crate::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid simulator input: {0}")]
    Invalid(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("simulation produced a non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r += TAU;
    }
    r
}

/// Platform-specific ground-truth dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "platform", rename_all = "snake_case")]
pub enum Simulator {
    Msd(MsdParams),
    DiffDrive(DiffDriveParams),
    Quad(QuadParams),
}

/// Observed state plus the simulator's hidden internals (controller memory,
/// body rates).
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub x: Vec<f64>,
    pub pid: PidState,
    pub omega: [f64; 3],
}

impl SimState {
    pub fn new(x: Vec<f64>) -> Self {
        Self {
            x,
            pid: PidState::default(),
            omega: [0.0; 3],
        }
    }
}

impl Simulator {
    pub fn default_for(platform: Platform) -> Self {
        match platform {
            Platform::Msd => Simulator::Msd(MsdParams::default()),
            Platform::DiffDrive => Simulator::DiffDrive(DiffDriveParams::default()),
            Platform::Quad => Simulator::Quad(QuadParams::default()),
        }
    }

    pub fn platform(&self) -> Platform {
        match self {
            Simulator::Msd(_) => Platform::Msd,
            Simulator::DiffDrive(_) => Platform::DiffDrive,
            Simulator::Quad(_) => Platform::Quad,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Simulator::Msd(p) => p.dt,
            Simulator::DiffDrive(p) => p.dt,
            Simulator::Quad(p) => p.dt,
        }
    }

    /// Environment factors acting on a robot in state `x` at control step
    /// `step`. The ground robot reads the surface under each wheel.
    pub fn env_factors(&self, sampler: &mut EnvSampler, x: &[f64], step: usize, rng: &mut Rng) -> Vec<f64> {
        match self {
            Simulator::DiffDrive(p) => {
                let (l, r) = p.wheel_positions(x[0], x[1], x[2]);
                let mut e = sampler.sample(&l, step, rng);
                e.extend(sampler.sample(&r, step, rng));
                e
            }
            Simulator::Quad(_) => sampler.sample(&x[..3], step, rng),
            Simulator::Msd(_) => sampler.sample(&x[..1], step, rng),
        }
    }

    /// Advances `s` by one control step under action `u` and factors `e`.
    pub fn step(&self, s: &mut SimState, u: &[f64], e: &[f64]) -> Result<(), EnvError> {
        let p = self.platform();
        if s.x.len() != p.state_dim() || u.len() != p.action_dim() || e.len() != p.env_dim() {
            return Err(EnvError::Invalid(format!(
                "expected state/action/env widths {}/{}/{}, got {}/{}/{}",
                p.state_dim(),
                p.action_dim(),
                p.env_dim(),
                s.x.len(),
                u.len(),
                e.len()
            )));
        }
        s.x = match self {
            Simulator::Msd(m) => m.step(&s.x, u[0], e[0], m.dt)?,
            Simulator::DiffDrive(d) => d.step(&s.x, &mut s.pid, u, e)?,
            Simulator::Quad(q) => q.step(&s.x, &mut s.omega, u, e)?,
        };
        Ok(())
    }
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Factors that acted during the step.
    pub e: Vec<f64>,
    pub x_next: Vec<f64>,
}

/// A simulator paired with its environment schedule and a step counter.
#[derive(Clone, Debug)]
pub struct Env {
    pub sim: Simulator,
    sampler: EnvSampler,
    state: SimState,
    step: usize,
}

impl Env {
    pub fn new(sim: Simulator, schedule: EnvSchedule) -> Result<Self, EnvError> {
        let surface_dim = match sim.platform() {
            Platform::DiffDrive => 3,
            p => p.env_dim(),
        };
        if schedule.value_dim() != surface_dim {
            return Err(EnvError::Schedule(format!(
                "{} schedule must produce {} values, got {}",
                sim.platform(),
                surface_dim,
                schedule.value_dim()
            )));
        }
        let sampler = EnvSampler::new(schedule, sim.dt())?;
        let n = sim.platform().state_dim();
        let mut x = vec![0.0; n];
        if let Some(q) = sim.platform().quat_offset() {
            x[q] = 1.0;
        }
        Ok(Self {
            sim,
            sampler,
            state: SimState::new(x),
            step: 0,
        })
    }

    pub fn platform(&self) -> Platform {
        self.sim.platform()
    }

    pub fn schedule(&self) -> &EnvSchedule {
        &self.sampler.schedule
    }

    /// Restarts at `x0` with zeroed hidden state and step counter.
    pub fn reset(&mut self, x0: Vec<f64>) -> Result<(), EnvError> {
        if x0.len() != self.platform().state_dim() {
            return Err(EnvError::Invalid(format!(
                "initial state has {} entries, expected {}",
                x0.len(),
                self.platform().state_dim()
            )));
        }
        self.state = SimState::new(x0);
        self.step = 0;
        self.sampler.reset();
        Ok(())
    }

    pub fn state(&self) -> &[f64] {
        &self.state.x
    }

    pub fn sim_state(&self) -> &SimState {
        &self.state
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Factors at the current state and step (privileged information).
    pub fn env_factors(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.sim.env_factors(&mut self.sampler, &self.state.x, self.step, rng)
    }

    pub fn step(&mut self, u: &[f64], rng: &mut Rng) -> Result<StepOutcome, EnvError> {
        let e = self.env_factors(rng);
        self.sim.step(&mut self.state, u, &e).map_err(|err| match err {
            EnvError::Numerics(NumericsError::NonFinite { .. }) => EnvError::NonFinite { step: self.step },
            other => other,
        })?;
        if self.state.x.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite { step: self.step });
        }
        self.step += 1;
        Ok(StepOutcome {
            e,
            x_next: self.state.x.clone(),
        })
    }
}

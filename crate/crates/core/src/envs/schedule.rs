use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::Rng;

/// Axis-aligned region of the plane carrying one environment value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub value: Vec<f64>,
}

impl Region {
    /// Euclidean distance from `p` to the rectangle (0 inside).
    fn distance(&self, p: [f64; 2]) -> f64 {
        let dx = (self.min[0] - p[0]).max(0.0).max(p[0] - self.max[0]);
        let dy = (self.min[1] - p[1]).max(0.0).max(p[1] - self.max[1]);
        dx.hypot(dy)
    }
}

/// Generator of environment values over space and time.
///
/// Values are "surface-level": a friction triple for the ground robot (the
/// simulator samples it under each wheel), a wind force vector for the
/// quadrotor, a mass for the mass-spring-damper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSchedule {
    Constant {
        value: Vec<f64>,
    },
    /// First region containing the position wins; outside every region
    /// the nearest region is used.
    PiecewiseConstantSpatial {
        regions: Vec<Region>,
    },
    /// Linear interpolation in distance from `center`, clamped outside
    /// `[inner_radius, outer_radius]`.
    RadialContinuous {
        center: [f64; 2],
        inner_radius: f64,
        outer_radius: f64,
        inner: Vec<f64>,
        outer: Vec<f64>,
    },
    /// Cycles through `values`, switching every `period` control steps.
    TimeVarying {
        period: usize,
        values: Vec<Vec<f64>>,
    },
    /// Wind along x: `nominal + amplitude * sin(2 pi k / period)`, held for
    /// `update_every` steps.
    SinusoidalWind {
        nominal: f64,
        amplitude: f64,
        period: f64,
        update_every: usize,
    },
    /// Wind along x: `d0 * exp(-|p - source| / decay) + sigma * B_t`, with
    /// `B` a Brownian motion sampled at the control rate.
    DissipatingBrownianWind {
        source: [f64; 3],
        d0: f64,
        decay: f64,
        sigma: f64,
    },
    MassSwitch {
        initial: f64,
        switch_step: usize,
        r#final: f64,
    },
}

impl EnvSchedule {
    pub fn constant(value: Vec<f64>) -> Self {
        EnvSchedule::Constant { value }
    }

    /// Width of the produced values.
    pub fn value_dim(&self) -> usize {
        match self {
            EnvSchedule::Constant { value } => value.len(),
            EnvSchedule::PiecewiseConstantSpatial { regions } => {
                regions.first().map_or(0, |r| r.value.len())
            }
            EnvSchedule::RadialContinuous { inner, .. } => inner.len(),
            EnvSchedule::TimeVarying { values, .. } => values.first().map_or(0, Vec::len),
            EnvSchedule::SinusoidalWind { .. } | EnvSchedule::DissipatingBrownianWind { .. } => 3,
            EnvSchedule::MassSwitch { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Schedule(m.to_string()));
        let dim = self.value_dim();
        match self {
            EnvSchedule::PiecewiseConstantSpatial { regions } => {
                if regions.is_empty() {
                    return bad("piecewise layout needs at least one region");
                }
                if regions.iter().any(|r| r.value.len() != dim) {
                    return bad("regions disagree on value width");
                }
                if regions.iter().any(|r| r.min[0] > r.max[0] || r.min[1] > r.max[1]) {
                    return bad("region with min > max");
                }
            }
            EnvSchedule::RadialContinuous {
                inner_radius,
                outer_radius,
                inner,
                outer,
                ..
            } => {
                if inner.len() != outer.len() || inner_radius < &0.0 || outer_radius <= inner_radius {
                    return bad("radial profile needs matching endpoints and 0 <= inner < outer");
                }
            }
            EnvSchedule::TimeVarying { period, values } => {
                if *period == 0 || values.is_empty() || values.iter().any(|v| v.len() != dim) {
                    return bad("time-varying schedule needs period > 0 and equal-width values");
                }
            }
            EnvSchedule::SinusoidalWind {
                period,
                update_every,
                ..
            } => {
                if *period <= 0.0 || *update_every == 0 {
                    return bad("sinusoidal wind needs positive period and update interval");
                }
            }
            EnvSchedule::DissipatingBrownianWind { decay, sigma, .. } => {
                if *decay <= 0.0 || *sigma < 0.0 {
                    return bad("brownian wind needs decay > 0 and sigma >= 0");
                }
            }
            EnvSchedule::MassSwitch { initial, r#final, .. } => {
                if *initial <= 0.0 || *r#final <= 0.0 {
                    return bad("masses must be positive");
                }
            }
            EnvSchedule::Constant { .. } => {}
        }
        if dim == 0 {
            return bad("empty environment value");
        }
        Ok(())
    }

    /// Deterministic part of the schedule at `position` and control step.
    /// For the Brownian wind this is the dissipating mean field only.
    pub fn value_at(&self, position: &[f64], step: usize) -> Vec<f64> {
        let p2 = [
            position.first().copied().unwrap_or(0.0),
            position.get(1).copied().unwrap_or(0.0),
        ];
        match self {
            EnvSchedule::Constant { value } => value.clone(),
            EnvSchedule::PiecewiseConstantSpatial { regions } => {
                let mut best = &regions[0];
                let mut best_d = f64::INFINITY;
                for r in regions {
                    let d = r.distance(p2);
                    if d == 0.0 {
                        return r.value.clone();
                    }
                    if d < best_d {
                        best_d = d;
                        best = r;
                    }
                }
                best.value.clone()
            }
            EnvSchedule::RadialContinuous {
                center,
                inner_radius,
                outer_radius,
                inner,
                outer,
            } => {
                let rad = (p2[0] - center[0]).hypot(p2[1] - center[1]);
                let s = ((rad - inner_radius) / (outer_radius - inner_radius)).clamp(0.0, 1.0);
                inner.iter().zip(outer).map(|(a, b)| a + s * (b - a)).collect()
            }
            EnvSchedule::TimeVarying { period, values } => values[(step / period) % values.len()].clone(),
            EnvSchedule::SinusoidalWind {
                nominal,
                amplitude,
                period,
                update_every,
            } => {
                let k = (step / update_every) * update_every;
                let dx = nominal + amplitude * (std::f64::consts::TAU * k as f64 / period).sin();
                vec![dx, 0.0, 0.0]
            }
            EnvSchedule::DissipatingBrownianWind { source, d0, decay, .. } => {
                let dist = (0..3)
                    .map(|i| position.get(i).copied().unwrap_or(0.0) - source[i])
                    .map(|d| d * d)
                    .sum::<f64>()
                    .sqrt();
                vec![d0 * (-dist / decay).exp(), 0.0, 0.0]
            }
            EnvSchedule::MassSwitch {
                initial,
                switch_step,
                r#final,
            } => vec![if step < *switch_step { *initial } else { *r#final }],
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, EnvSchedule::DissipatingBrownianWind { sigma, .. } if *sigma > 0.0)
    }
}

/// Stateful sampler: adds the Brownian component on top of
/// [`EnvSchedule::value_at`]. Pure for every other schedule.
#[derive(Clone, Debug)]
pub struct EnvSampler {
    pub schedule: EnvSchedule,
    dt: f64,
    walk: f64,
    walk_step: usize,
}

impl EnvSampler {
    pub fn new(schedule: EnvSchedule, dt: f64) -> Result<Self, EnvError> {
        schedule.validate()?;
        Ok(Self {
            schedule,
            dt,
            walk: 0.0,
            walk_step: 0,
        })
    }

    pub fn reset(&mut self) {
        self.walk = 0.0;
        self.walk_step = 0;
    }

    /// Value at `(position, step)`. Brownian noise advances once per new
    /// step index, consuming one normal draw from `rng` per step.
    pub fn sample(&mut self, position: &[f64], step: usize, rng: &mut Rng) -> Vec<f64> {
        let mut v = self.schedule.value_at(position, step);
        if let EnvSchedule::DissipatingBrownianWind { sigma, .. } = self.schedule {
            while self.walk_step < step {
                let xi: f64 = StandardNormal.sample(rng);
                self.walk += xi * self.dt.sqrt();
                self.walk_step += 1;
            }
            v[0] += sigma * self.walk;
        }
        v
    }
}

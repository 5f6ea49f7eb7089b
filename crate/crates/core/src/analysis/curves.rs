use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::quat_angle_error;
use super::{continuous_bound, AnalysisError};
use crate::data::{Dataset, Trajectory};
use crate::envs::{wrap_angle, SimState, Simulator};
use crate::models::Checkpoint;
use crate::numerics::{ode_step, SolverKind};
use crate::platform::Platform;

/// Anything that can roll a trajectory forward open loop from step `k0`.
pub trait SegmentPredictor {
    /// Predicted states `k0+1 ..= k0+horizon` under the recorded actions.
    fn predict(&self, traj: &Trajectory, k0: usize, horizon: usize) -> Result<Vec<Vec<f64>>, AnalysisError>;

    /// Earliest start step the predictor supports.
    fn min_start(&self) -> usize {
        0
    }
}

/// Where the latent comes from during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    /// `z_i = g(e_i)` from the recorded factors at every step.
    Privileged,
    /// `z = h(window)` from the true history before `k0`, held fixed.
    Adaptive,
}

pub struct LearnedPredictor<'a> {
    pub checkpoint: &'a Checkpoint,
    pub source: LatentSource,
}

impl SegmentPredictor for LearnedPredictor<'_> {
    fn predict(&self, traj: &Trajectory, k0: usize, horizon: usize) -> Result<Vec<Vec<f64>>, AnalysisError> {
        let ck = self.checkpoint;
        let meta = &ck.meta;
        let fixed = match self.source {
            LatentSource::Privileged => None,
            LatentSource::Adaptive => {
                let am = ck
                    .adaptive
                    .as_ref()
                    .ok_or_else(|| AnalysisError::Invalid("checkpoint has no adaptive module".into()))?;
                Some(am.encode(&traj.history_window(k0, am.history_len)?)?)
            }
        };
        let mut x = traj.state(k0).to_vec();
        let mut out = Vec::with_capacity(horizon);
        for i in k0..k0 + horizon {
            let t = &traj.transitions[i];
            let z = match &fixed {
                Some(z) => z.clone(),
                None => ck.encoder.encode(&t.e)?,
            };
            x = ck.state_net.predict_next(&x, &t.u, &z, meta.dt, meta.solver)?;
            out.push(x.clone());
        }
        Ok(out)
    }

    fn min_start(&self) -> usize {
        match (self.source, &self.checkpoint.adaptive) {
            (LatentSource::Adaptive, Some(am)) => am.history_len,
            _ => 0,
        }
    }
}

/// The ground-truth simulator replaying the recorded actions and factors.
/// Hidden simulator state (controller memory, body rates) restarts from
/// zero at the segment start, so the replay is exact only for the
/// spring-mass system.
pub struct SimulatorPredictor(pub Simulator);

impl SegmentPredictor for SimulatorPredictor {
    fn predict(&self, traj: &Trajectory, k0: usize, horizon: usize) -> Result<Vec<Vec<f64>>, AnalysisError> {
        let mut s = SimState::new(traj.state(k0).to_vec());
        let mut out = Vec::with_capacity(horizon);
        for t in &traj.transitions[k0..k0 + horizon] {
            self.0.step(&mut s, &t.u, &t.e)?;
            out.push(s.x.clone());
        }
        Ok(out)
    }
}

/// Per-horizon RMSE by state channel. Channels a platform lacks stay
/// empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub horizons: Vec<usize>,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub angle: Vec<f64>,
    pub n_segments: usize,
}

impl ErrorCurve {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "horizon,pos_rmse,vel_rmse,ang_rmse")?;
        for (i, h) in self.horizons.iter().enumerate() {
            let ang = self.angle.get(i).map(|a| a.to_string()).unwrap_or_default();
            writeln!(w, "{h},{},{},{ang}", self.position[i], self.velocity[i])?;
        }
        Ok(())
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Position, velocity and (optional) angle error between two states.
fn channel_errors(p: Platform, pred: &[f64], truth: &[f64]) -> Result<(f64, f64, Option<f64>), AnalysisError> {
    Ok(match p {
        Platform::Msd => ((pred[0] - truth[0]).abs(), (pred[1] - truth[1]).abs(), None),
        Platform::DiffDrive => (
            norm_diff(&pred[..2], &truth[..2]),
            norm_diff(&pred[3..5], &truth[3..5]),
            Some(wrap_angle(pred[2] - truth[2]).abs()),
        ),
        Platform::Quad => (
            norm_diff(&pred[..3], &truth[..3]),
            norm_diff(&pred[3..6], &truth[3..6]),
            Some(quat_angle_error(&truth[6..10], &pred[6..10])?),
        ),
    })
}

/// Open-loop prediction error for horizons `1..=max_horizon`, over every
/// segment of the test set that starts at or after `min_start` (and the
/// predictor's own minimum) and fits inside its trajectory.
pub fn error_curve(
    predictor: &dyn SegmentPredictor,
    test: &Dataset,
    max_horizon: usize,
    min_start: usize,
) -> Result<ErrorCurve, AnalysisError> {
    if max_horizon == 0 {
        return Err(AnalysisError::Invalid("max horizon must be at least 1".into()));
    }
    let start = min_start.max(predictor.min_start());
    let mut sq = vec![[0.0f64; 3]; max_horizon];
    let mut n = 0usize;
    for t in &test.trajectories {
        if t.len() < start + max_horizon {
            continue;
        }
        for k0 in start..=t.len() - max_horizon {
            let pred = predictor.predict(t, k0, max_horizon)?;
            for (i, x) in pred.iter().enumerate() {
                let (ep, ev, ea) = channel_errors(test.platform, x, t.state(k0 + i + 1))?;
                sq[i][0] += ep * ep;
                sq[i][1] += ev * ev;
                sq[i][2] += ea.unwrap_or(0.0).powi(2);
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(AnalysisError::Horizon { horizon: max_horizon });
    }
    let has_angle = test.platform != Platform::Msd;
    let rms = |s: f64| (s / n as f64).sqrt();
    Ok(ErrorCurve {
        horizons: (1..=max_horizon).collect(),
        position: sq.iter().map(|s| rms(s[0])).collect(),
        velocity: sq.iter().map(|s| rms(s[1])).collect(),
        angle: if has_angle { sq.iter().map(|s| rms(s[2])).collect() } else { Vec::new() },
        n_segments: n,
    })
}

/// Measured divergence vs the vector-field bound at each logged time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub times: Vec<f64>,
    pub divergence: Vec<f64>,
    pub bound: Vec<f64>,
    pub eps: f64,
    pub lipschitz: f64,
    /// First time at which the divergence exceeded the bound.
    pub violation: Option<f64>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Integrates `true_field` and `perturbed_field` from `x0` under
/// piecewise-constant `controls` (one per step of `dt`, RK4) and checks
/// `|x~(t) - x(t)| <= (eps/L)(e^{Lt} - 1)` at every step. When `eps` is
/// `None` it is measured as the largest field mismatch seen along the
/// perturbed trajectory (at the RK4 stage points).
pub fn empirical_bound_check(
    true_field: &dyn Fn(&[f64], &[f64]) -> Vec<f64>,
    perturbed_field: &dyn Fn(&[f64], &[f64]) -> Vec<f64>,
    x0: &[f64],
    controls: &[Vec<f64>],
    dt: f64,
    lipschitz: f64,
    eps: Option<f64>,
) -> Result<BoundReport, AnalysisError> {
    if !(dt > 0.0) {
        return Err(AnalysisError::Invalid(format!("dt must be positive, got {dt}")));
    }
    let fa = |x: &[f64], u: &[f64], _z: &[f64], _t: f64| true_field(x, u);
    let measured = std::cell::Cell::new(0.0f64);
    let fb = |x: &[f64], u: &[f64], _z: &[f64], _t: f64| {
        let p = perturbed_field(x, u);
        measured.set(measured.get().max(norm_diff(&p, &true_field(x, u))));
        p
    };
    let mut xa = x0.to_vec();
    let mut xb = x0.to_vec();
    let mut trace = vec![(0.0, 0.0)];
    for (k, u) in controls.iter().enumerate() {
        xa = ode_step(&fa, &xa, u, &[], 0.0, SolverKind::Rk4, dt)?;
        xb = ode_step(&fb, &xb, u, &[], 0.0, SolverKind::Rk4, dt)?;
        trace.push(((k + 1) as f64 * dt, norm_diff(&xa, &xb)));
    }
    let eps = eps.unwrap_or(measured.get());
    let mut report = BoundReport {
        times: Vec::new(),
        divergence: Vec::new(),
        bound: Vec::new(),
        eps,
        lipschitz,
        violation: None,
    };
    for (t, d) in trace {
        let b = continuous_bound(eps, lipschitz, t)?;
        if d > b * (1.0 + 1e-9) + 1e-12 && report.violation.is_none() {
            report.violation = Some(t);
        }
        report.times.push(t);
        report.divergence.push(d);
        report.bound.push(b);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collect_msd, MsdCollect};
    use crate::Rng;
    use rand::SeedableRng;

    #[test]
    fn oracle_curve_is_zero() {
        let cfg = MsdCollect { n_trajectories: 5, steps: 30, ..Default::default() };
        let ds = collect_msd(&cfg, &Simulator::default_for(Platform::Msd), &mut Rng::seed_from_u64(0)).unwrap();
        let c = error_curve(&SimulatorPredictor(Simulator::default_for(Platform::Msd)), &ds, 20, 0).unwrap();
        assert_eq!(c.horizons, (1..=20).collect::<Vec<_>>());
        assert!(c.position.iter().chain(&c.velocity).all(|v| *v == 0.0));
        assert!(c.angle.is_empty());
        assert_eq!(c.n_segments, 5 * 11);
        assert!(matches!(error_curve(&SimulatorPredictor(Simulator::default_for(Platform::Msd)), &ds, 31, 0), Err(AnalysisError::Horizon { .. })));
    }

    #[test]
    fn identical_fields_never_diverge() {
        let f = |x: &[f64], u: &[f64]| vec![x[1], -x[0] + u[0]];
        let r = empirical_bound_check(&f, &f, &[1.0, 0.0], &vec![vec![0.3]; 50], 0.01, 1.0, None).unwrap();
        assert!(r.passed());
        assert!(r.divergence.iter().all(|d| *d == 0.0));
        assert_eq!(r.eps, 0.0);
    }

    #[test]
    fn constant_perturbation_is_tight() {
        let f = |_: &[f64], _: &[f64]| vec![0.0, 0.0];
        let g = |_: &[f64], _: &[f64]| vec![0.03, 0.04];
        let r = empirical_bound_check(&f, &g, &[0.0, 0.0], &vec![vec![]; 100], 0.02, 0.0, None).unwrap();
        assert!(r.passed());
        for (d, b) in r.divergence.iter().zip(&r.bound) {
            assert!((d - b).abs() < 1e-9);
        }
    }

    #[test]
    fn understated_eps_is_flagged() {
        let f = |_: &[f64], _: &[f64]| vec![0.0];
        let g = |_: &[f64], _: &[f64]| vec![0.1];
        let r = empirical_bound_check(&f, &g, &[0.0], &vec![vec![]; 10], 0.1, 0.0, Some(0.05)).unwrap();
        assert_eq!(r.violation, Some(0.1));
    }
}

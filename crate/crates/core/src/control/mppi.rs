use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cost::{CostCursor, CostSpec};
use super::ControlError;
use crate::models::StateNet;
use crate::numerics::SolverKind;
use crate::platform::Platform;
use crate::Rng;

/// Batched one-step model used for planner rollouts. Implementations are
/// read-only so chunks can be rolled out concurrently.
pub trait PlannerModel: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Advances `rows` states (row-major) in place under `actions`.
    fn step_batch(&self, states: &mut [f64], actions: &[f64], rows: usize);
}

/// Learned state net with the latent held fixed over the plan.
pub struct LatentModel<'a> {
    pub net: &'a StateNet,
    pub z: Vec<f64>,
    pub dt: f64,
    pub solver: SolverKind,
}

impl PlannerModel for LatentModel<'_> {
    fn state_dim(&self) -> usize {
        self.net.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.net.action_dim()
    }

    fn step_batch(&self, states: &mut [f64], actions: &[f64], rows: usize) {
        self.net.step_batch(states, actions, &self.z, rows, self.dt, self.solver);
    }
}

/// Known discrete-time linear dynamics `x' = A x + B u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl PlannerModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.len()
    }

    fn action_dim(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }

    fn step_batch(&self, states: &mut [f64], actions: &[f64], rows: usize) {
        let (n, m) = (self.state_dim(), self.action_dim());
        for r in 0..rows {
            let x = states[r * n..(r + 1) * n].to_vec();
            let u = &actions[r * m..(r + 1) * m];
            for i in 0..n {
                states[r * n + i] = self.a[i].iter().zip(&x).map(|(a, x)| a * x).sum::<f64>()
                    + self.b[i].iter().zip(u).map(|(b, u)| b * u).sum::<f64>();
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MppiConfig {
    pub horizon: usize,
    pub n_samples: usize,
    pub temperature: f64,
    pub sigma: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    /// Samples rolled out together (and per parallel task).
    pub chunk_size: usize,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self::goal_reach(Platform::DiffDrive)
    }
}

impl MppiConfig {
    /// Diff-drive goal reaching, or the platform's main task.
    pub fn goal_reach(p: Platform) -> Self {
        let (u_min, u_max) = action_bounds(p);
        match p {
            Platform::DiffDrive => Self::new(20, 500, 1e-2, vec![0.1, 0.1], u_min, u_max),
            Platform::Quad => Self::new(40, 4096, 0.05, vec![0.25, 0.7, 0.7, 0.7], u_min, u_max),
            Platform::Msd => Self::new(30, 500, 0.1, vec![0.5], u_min, u_max),
        }
    }

    pub fn path_tracking() -> Self {
        let (u_min, u_max) = action_bounds(Platform::DiffDrive);
        Self::new(15, 800, 1e-4, vec![0.5, 0.3], u_min, u_max)
    }

    pub fn velocity_tracking() -> Self {
        let (u_min, u_max) = action_bounds(Platform::DiffDrive);
        Self::new(20, 800, 1e-4, vec![0.2, 0.1], u_min, u_max)
    }

    fn new(horizon: usize, n_samples: usize, temperature: f64, sigma: Vec<f64>, u_min: Vec<f64>, u_max: Vec<f64>) -> Self {
        Self { horizon, n_samples, temperature, sigma, u_min, u_max, chunk_size: 64 }
    }

    pub fn validate(&self, action_dim: usize) -> Result<(), ControlError> {
        let bad = |m: String| Err(ControlError::Invalid(m));
        if self.horizon == 0 || self.n_samples == 0 || self.chunk_size == 0 {
            return bad("horizon, sample count and chunk size must be at least 1".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.sigma.len() != action_dim || self.u_min.len() != action_dim || self.u_max.len() != action_dim {
            return bad(format!("sigma and bounds need {action_dim} entries"));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return bad("sigma must be positive".into());
        }
        if self.u_min.iter().zip(&self.u_max).any(|(a, b)| !(a <= b)) {
            return bad("action lower bounds exceed upper bounds".into());
        }
        Ok(())
    }

    pub fn clip(&self, u: &mut [f64]) {
        for (j, v) in u.iter_mut().enumerate() {
            *v = v.clamp(self.u_min[j], self.u_max[j]);
        }
    }
}

/// Action bounds per platform, matching the ranges covered by the default
/// data collection: ground robot `[u_forward, u_turn]`, quad
/// `[thrust (N), body rates (rad/s)]`, spring-mass force (N).
pub fn action_bounds(p: Platform) -> (Vec<f64>, Vec<f64>) {
    match p {
        Platform::DiffDrive => (vec![0.0, -1.5], vec![0.5, 1.5]),
        Platform::Quad => (vec![0.5 * 9.81, -1.0, -1.0, -1.0], vec![1.5 * 9.81, 1.0, 1.0, 1.0]),
        Platform::Msd => (vec![-5.0], vec![5.0]),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlResult {
    pub u_star: Vec<f64>,
    pub costs: Vec<f64>,
    pub weights: Vec<f64>,
    /// Weighted-average sequence shifted by one step (last action
    /// repeated); the next plan's nominal.
    pub nominal: Vec<Vec<f64>>,
}

/// `exp(-(J_i - J_min) / lambda)` normalised. Non-finite costs get zero
/// weight.
pub fn softmax_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>, ControlError> {
    let min = costs.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(ControlError::NoFiniteCost);
    }
    let mut w: Vec<f64> = costs
        .iter()
        .map(|c| if c.is_finite() { (-(c - min) / temperature).exp() } else { 0.0 })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

/// Zero sequence of the configured horizon, clipped into the bounds.
pub fn initial_nominal(cfg: &MppiConfig, action_dim: usize) -> Vec<Vec<f64>> {
    let mut u = vec![0.0; action_dim];
    cfg.clip(&mut u);
    vec![u; cfg.horizon]
}

/// One MPPI solve from `x`. Sample `i` draws its noise from its own stream
/// of a seed taken from `rng`, so the result does not depend on how the
/// chunks are scheduled across threads.
pub fn mppi_plan(
    x: &[f64],
    model: &dyn PlannerModel,
    cost: &CostSpec,
    cfg: &MppiConfig,
    nominal: &[Vec<f64>],
    step: usize,
    cursor: CostCursor,
    rng: &mut Rng,
) -> Result<ControlResult, ControlError> {
    let (n, m, h) = (model.state_dim(), model.action_dim(), cfg.horizon);
    cfg.validate(m)?;
    if x.len() != n {
        return Err(ControlError::Invalid(format!("state has {} entries, model expects {n}", x.len())));
    }
    if nominal.len() != h || nominal.iter().any(|u| u.len() != m) {
        return Err(ControlError::Invalid(format!("nominal must be {h} actions of width {m}")));
    }
    let seed = rng.next_u64();
    let starts: Vec<usize> = (0..cfg.n_samples).step_by(cfg.chunk_size).collect();
    // Each chunk returns (sequences [rows][h*m], costs).
    let chunks: Vec<(Vec<Vec<f64>>, Vec<f64>)> = starts
        .par_iter()
        .map(|&s0| {
            let rows = cfg.chunk_size.min(cfg.n_samples - s0);
            let mut seqs = Vec::with_capacity(rows);
            for i in s0..s0 + rows {
                let mut r = Rng::seed_from_u64(seed);
                r.set_stream(i as u64);
                let mut seq = Vec::with_capacity(h * m);
                for u in nominal {
                    let mut v: Vec<f64> = u
                        .iter()
                        .zip(&cfg.sigma)
                        .map(|(a, s)| a + s * Distribution::<f64>::sample(&StandardNormal, &mut r))
                        .collect();
                    cfg.clip(&mut v);
                    seq.extend(v);
                }
                seqs.push(seq);
            }
            let mut states: Vec<f64> = (0..rows).flat_map(|_| x.iter().copied()).collect();
            let mut traj: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(h); rows];
            let mut actions = vec![0.0; rows * m];
            for t in 0..h {
                for (r, seq) in seqs.iter().enumerate() {
                    actions[r * m..(r + 1) * m].copy_from_slice(&seq[t * m..(t + 1) * m]);
                }
                model.step_batch(&mut states, &actions, rows);
                for (r, tr) in traj.iter_mut().enumerate() {
                    tr.push(states[r * n..(r + 1) * n].to_vec());
                }
            }
            let costs = traj
                .iter()
                .zip(&seqs)
                .map(|(tr, seq)| {
                    let acts: Vec<Vec<f64>> = seq.chunks(m).map(<[f64]>::to_vec).collect();
                    cost.trajectory_cost(tr, &acts, step, cursor)
                })
                .collect();
            (seqs, costs)
        })
        .collect();
    let mut seqs = Vec::with_capacity(cfg.n_samples);
    let mut costs = Vec::with_capacity(cfg.n_samples);
    for (s, c) in chunks {
        seqs.extend(s);
        costs.extend(c);
    }
    let weights = softmax_weights(&costs, cfg.temperature)?;
    let mut avg = vec![0.0; h * m];
    for (seq, w) in seqs.iter().zip(&weights) {
        if *w > 0.0 {
            avg.iter_mut().zip(seq).for_each(|(a, s)| *a += w * s);
        }
    }
    let mut seq: Vec<Vec<f64>> = avg.chunks(m).map(<[f64]>::to_vec).collect();
    for u in &mut seq {
        // Guard against round-off pushing a convex combination outside.
        cfg.clip(u);
    }
    let u_star = seq[0].clone();
    let mut next = seq[1..].to_vec();
    next.push(seq[h - 1].clone());
    Ok(ControlResult { u_star, costs, weights, nominal: next })
}

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cost::{CostCursor, CostSpec, GoalReach, PoseTrack, Quadratic};
use super::mppi::{mppi_plan, LatentModel, MppiConfig};
use super::ControlError;
use crate::data::HistoryWindow;
use crate::envs::{wrap_angle, Env};
use crate::models::{Checkpoint, DynamicsKind};
use crate::platform::Platform;
use crate::Rng;

/// Which model and latent source drive the planner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    /// NODE with `z = h(history)` re-estimated every step.
    AdnodePhase2,
    /// NODE with privileged `z = g(e)` from the true factors.
    AdnodePhase1Privileged,
    /// NODE with `z` estimated once after the warm start, then frozen.
    FixedNode,
    /// Discrete-map model with privileged `z = g(e)`.
    MlpPhase1,
    /// Discrete-map model with `z = h(history)`.
    MlpPhase2,
}

impl ControlMode {
    pub const ALL: [ControlMode; 5] = [
        ControlMode::AdnodePhase2,
        ControlMode::AdnodePhase1Privileged,
        ControlMode::FixedNode,
        ControlMode::MlpPhase1,
        ControlMode::MlpPhase2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControlMode::AdnodePhase2 => "adnode-phase2",
            ControlMode::AdnodePhase1Privileged => "adnode-phase1-privileged",
            ControlMode::FixedNode => "fixed-node",
            ControlMode::MlpPhase1 => "mlp-phase1",
            ControlMode::MlpPhase2 => "mlp-phase2",
        }
    }

    fn expected_kind(self) -> DynamicsKind {
        match self {
            ControlMode::MlpPhase1 | ControlMode::MlpPhase2 => DynamicsKind::DiscreteMap,
            _ => DynamicsKind::Node,
        }
    }

    fn privileged(self) -> bool {
        matches!(self, ControlMode::AdnodePhase1Privileged | ControlMode::MlpPhase1)
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControlMode {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ControlError::Invalid(format!("unknown control mode {s:?}")))
    }
}

/// Random actions `clip(center + sigma * xi)` used before the history
/// window is full.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub center: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl WarmStart {
    pub fn for_platform(p: Platform) -> Self {
        match p {
            Platform::DiffDrive => Self { center: vec![0.1, 0.0], sigma: vec![0.05, 0.3] },
            Platform::Quad => Self { center: vec![9.81, 0.0, 0.0, 0.0], sigma: vec![0.5, 0.1, 0.1, 0.1] },
            Platform::Msd => Self { center: vec![0.0], sigma: vec![1.0] },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub steps: usize,
    pub mode: ControlMode,
    pub mppi: MppiConfig,
    pub cost: CostSpec,
    pub warm_start: WarmStart,
    /// Random steps before planning; defaults to the adaptive module's
    /// history length (5 without one).
    pub warm_start_steps: Option<usize>,
    /// Target position used for the distance metrics.
    pub goal: Vec<f64>,
    pub success_radius: f64,
    /// Success only counts if reached within this many steps.
    pub success_within: usize,
    /// Trailing steps over which the distance RMSE is taken.
    pub rmse_window: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self::for_platform(Platform::DiffDrive)
    }
}

impl EpisodeConfig {
    pub fn for_platform(p: Platform) -> Self {
        let (cost, goal, steps, rmse_window) = match p {
            Platform::DiffDrive => (CostSpec::GoalReach(GoalReach::default()), vec![0.0, 0.0], 150, 25),
            Platform::Quad => (CostSpec::Pose(PoseTrack::default()), vec![0.0; 3], 250, 50),
            Platform::Msd => {
                let c = Quadratic {
                    q: vec![vec![100.0, 0.0], vec![0.0, 10.0]],
                    r: vec![vec![0.01]],
                    q_terminal: vec![vec![100.0, 0.0], vec![0.0, 10.0]],
                    target: vec![1.0, 0.0],
                    u_ref: vec![0.0],
                };
                (CostSpec::Quadratic(c), vec![1.0], 300, 50)
            }
        };
        Self {
            steps,
            mode: ControlMode::AdnodePhase2,
            mppi: MppiConfig::goal_reach(p),
            cost,
            warm_start: WarmStart::for_platform(p),
            warm_start_steps: None,
            goal,
            success_radius: 0.01,
            success_within: 150,
            rmse_window,
        }
    }
}

/// Everything that happened in one closed-loop episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeLog {
    pub platform: Option<Platform>,
    /// `x_0 ..= x_T`.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub envs: Vec<Vec<f64>>,
    /// Latent used by the planner at each step (`None` while warming up).
    pub latents: Vec<Option<Vec<f64>>>,
    pub stage_costs: Vec<f64>,
    pub warm_start_steps: usize,
    pub adapt_calls: usize,
    pub planner_calls: usize,
    pub runtime_s: f64,
}

impl EpisodeLog {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let width = |v: &Vec<Vec<f64>>| v.first().map_or(0, Vec::len);
        let (n, m, p) = (width(&self.states), width(&self.actions), width(&self.envs));
        let l = self.latents.iter().flatten().next().map_or(0, Vec::len);
        let mut head = vec!["step".to_string()];
        head.extend((0..n).map(|i| format!("x{i}")));
        head.extend((0..m).map(|i| format!("u{i}")));
        head.extend((0..p).map(|i| format!("e{i}")));
        head.extend((0..l).map(|i| format!("z{i}")));
        head.push("cost".into());
        writeln!(w, "{}", head.join(","))?;
        for k in 0..self.actions.len() {
            let mut row = vec![k.to_string()];
            row.extend(self.states[k].iter().map(f64::to_string));
            row.extend(self.actions[k].iter().map(f64::to_string));
            row.extend(self.envs[k].iter().map(f64::to_string));
            match &self.latents[k] {
                Some(z) => row.extend(z.iter().map(f64::to_string)),
                None => row.extend((0..l).map(|_| String::new())),
            }
            row.push(self.stage_costs[k].to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Per-episode metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub mode: ControlMode,
    pub steps: usize,
    pub success: bool,
    pub min_distance: f64,
    pub final_distance: f64,
    /// Speed (norm of the velocity components) at the end.
    pub final_speed: f64,
    /// Distance-to-goal RMSE over the trailing window.
    pub rmse: f64,
    pub total_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
}

/// Position and velocity components of a state.
pub fn position_velocity(p: Platform, x: &[f64]) -> (&[f64], &[f64]) {
    match p {
        Platform::Msd => (&x[..1], &x[1..2]),
        Platform::DiffDrive => (&x[..2], &x[3..5]),
        Platform::Quad => (&x[..3], &x[3..6]),
    }
}

pub fn summarize(log: &EpisodeLog, cfg: &EpisodeConfig, with_runtime: bool) -> EpisodeSummary {
    let p = log.platform.unwrap_or(Platform::DiffDrive);
    let dist = |x: &[f64]| -> f64 {
        let (pos, _) = position_velocity(p, x);
        pos.iter().zip(&cfg.goal).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let d: Vec<f64> = log.states.iter().map(|x| dist(x)).collect();
    let last = log.states.last().map(|x| position_velocity(p, x).1.iter().map(|v| v * v).sum::<f64>().sqrt());
    let window = cfg.rmse_window.clamp(1, d.len().max(1));
    let tail = &d[d.len().saturating_sub(window)..];
    EpisodeSummary {
        mode: cfg.mode,
        steps: log.actions.len(),
        success: d.iter().take(cfg.success_within + 1).any(|v| *v < cfg.success_radius),
        min_distance: d.iter().copied().fold(f64::INFINITY, f64::min),
        final_distance: d.last().copied().unwrap_or(f64::NAN),
        final_speed: last.unwrap_or(f64::NAN),
        rmse: crate::analysis::rmse(tail),
        total_cost: log.stage_costs.iter().sum(),
        runtime_s: with_runtime.then_some(log.runtime_s),
    }
}

/// Per-step decision logic of the closed loop: warm start, latent
/// estimation according to the mode, and MPPI with a warm-started nominal.
pub struct Controller {
    cfg: EpisodeConfig,
    warm_steps: usize,
    history_len: usize,
    history: VecDeque<(Vec<f64>, Vec<f64>)>,
    nominal: Vec<Vec<f64>>,
    fixed_z: Option<Vec<f64>>,
    cursor: CostCursor,
    plan_rng: Rng,
    warm_rng: Rng,
    pub adapt_calls: usize,
    pub planner_calls: usize,
}

impl Controller {
    pub fn new(ck: &Checkpoint, cfg: &EpisodeConfig, seed: u64) -> Result<Self, ControlError> {
        let p = ck.platform();
        let (n, m) = (p.state_dim(), p.action_dim());
        if ck.state_net.kind != cfg.mode.expected_kind() {
            return Err(ControlError::Invalid(format!(
                "mode {} needs a {:?} model, checkpoint holds {:?}",
                cfg.mode,
                cfg.mode.expected_kind(),
                ck.state_net.kind
            )));
        }
        if !cfg.mode.privileged() && ck.adaptive.is_none() {
            return Err(ControlError::Invalid(format!("mode {} needs an adaptive module", cfg.mode)));
        }
        cfg.mppi.validate(m)?;
        cfg.cost.validate(n, m)?;
        if cfg.warm_start.center.len() != m || cfg.warm_start.sigma.len() != m {
            return Err(ControlError::Invalid(format!("warm start needs {m} entries")));
        }
        let history_len = ck.adaptive.as_ref().map_or(5, |a| a.history_len);
        let warm_steps = cfg.warm_start_steps.unwrap_or(history_len).max(if cfg.mode.privileged() { 0 } else { history_len });
        let mut master = Rng::seed_from_u64(seed);
        let mut u0 = cfg.warm_start.center.clone();
        cfg.mppi.clip(&mut u0);
        Ok(Self {
            cfg: cfg.clone(),
            warm_steps,
            history_len,
            history: VecDeque::with_capacity(history_len + 1),
            nominal: vec![u0; cfg.mppi.horizon],
            fixed_z: None,
            cursor: CostCursor::default(),
            plan_rng: Rng::seed_from_u64(master.next_u64()),
            warm_rng: Rng::seed_from_u64(master.next_u64()),
            adapt_calls: 0,
            planner_calls: 0,
        })
    }

    pub fn warm_start_steps(&self) -> usize {
        self.warm_steps
    }

    fn window(&self, len: usize) -> Result<HistoryWindow, ControlError> {
        let skip = self.history.len().saturating_sub(len);
        let (xs, us) = self.history.iter().skip(skip).cloned().unzip();
        Ok(HistoryWindow::new(xs, us)?)
    }

    fn random_action(&mut self) -> Vec<f64> {
        let ws = &self.cfg.warm_start;
        let mut u: Vec<f64> = ws
            .center
            .iter()
            .zip(&ws.sigma)
            .map(|(c, s)| c + s * Distribution::<f64>::sample(&StandardNormal, &mut self.warm_rng))
            .collect();
        self.cfg.mppi.clip(&mut u);
        u
    }

    /// Random action from the configured exploration distribution.
    pub fn explore(&mut self) -> Vec<f64> {
        self.random_action()
    }

    /// Chooses the action at control step `k`. `e` is the factor the
    /// environment exposes (used only by privileged modes).
    pub fn act(&mut self, ck: &Checkpoint, x: &[f64], e: &[f64], k: usize) -> Result<(Vec<f64>, Option<Vec<f64>>), ControlError> {
        if k < self.warm_steps {
            return Ok((self.random_action(), None));
        }
        let z = if self.cfg.mode.privileged() {
            ck.encoder.encode(e)?
        } else {
            let am = ck.adaptive.as_ref().expect("checked in new");
            if self.cfg.mode == ControlMode::FixedNode {
                match &self.fixed_z {
                    Some(z) => z.clone(),
                    None => {
                        self.adapt_calls += 1;
                        let z = am.encode(&self.window(am.history_len)?)?;
                        self.fixed_z = Some(z.clone());
                        z
                    }
                }
            } else {
                self.adapt_calls += 1;
                am.encode(&self.window(am.history_len)?)?
            }
        };
        let mut xp = x.to_vec();
        if let Some(h) = ck.platform().heading_index() {
            xp[h] = wrap_angle(xp[h]);
        }
        let model = LatentModel { net: &ck.state_net, z: z.clone(), dt: ck.meta.dt, solver: ck.meta.solver };
        let res = mppi_plan(&xp, &model, &self.cfg.cost, &self.cfg.mppi, &self.nominal, k, self.cursor, &mut self.plan_rng)?;
        self.planner_calls += 1;
        self.nominal = res.nominal;
        Ok((res.u_star, Some(z)))
    }

    /// Records the applied pair and the resulting state; returns the stage
    /// cost.
    pub fn observe(&mut self, x: Vec<f64>, u: Vec<f64>, x_next: &[f64], k: usize) -> f64 {
        let mut xc = x_next.to_vec();
        if let CostSpec::GoalReach(_) | CostSpec::PathTrack(_) = self.cfg.cost {
            xc[2] = wrap_angle(xc[2]);
        }
        let c = self.cfg.cost.stage(&xc, &u, k, &mut self.cursor);
        // Reaching the goal only ends a planned rollout, not the episode.
        self.cursor.reached = false;
        self.history.push_back((x, u));
        while self.history.len() > self.history_len {
            self.history.pop_front();
        }
        c
    }

    pub fn history_window(&self, len: usize) -> Option<HistoryWindow> {
        (self.history.len() >= len).then(|| self.window(len).ok()).flatten()
    }
}

/// Runs one closed-loop episode from `x0`. Simulator failures abort the
/// episode and hand back the partial log.
pub fn run_episode(env: &mut Env, x0: Vec<f64>, ck: &Checkpoint, cfg: &EpisodeConfig, seed: u64) -> Result<EpisodeLog, ControlError> {
    let p = env.platform();
    if ck.platform() != p {
        return Err(ControlError::Invalid(format!("{} checkpoint for a {p} environment", ck.platform())));
    }
    let start = Instant::now();
    let mut master = Rng::seed_from_u64(seed);
    let mut ctl = Controller::new(ck, cfg, master.next_u64())?;
    let mut env_rng = Rng::seed_from_u64(master.next_u64());
    env.reset(x0.clone())?;
    let mut log = EpisodeLog { platform: Some(p), states: vec![x0], warm_start_steps: ctl.warm_start_steps(), ..Default::default() };
    for k in 0..cfg.steps {
        let x = env.state().to_vec();
        let e_obs = env.env_factors(&mut env_rng);
        let (u, z) = ctl.act(ck, &x, &e_obs, k)?;
        let out = match env.step(&u, &mut env_rng) {
            Ok(o) => o,
            Err(source) => {
                log.runtime_s = start.elapsed().as_secs_f64();
                return Err(ControlError::Simulator { step: k, source, log: Box::new(log) });
            }
        };
        let c = ctl.observe(x, u.clone(), &out.x_next, k);
        log.states.push(out.x_next);
        log.actions.push(u);
        log.envs.push(out.e);
        log.latents.push(z);
        log.stage_costs.push(c);
    }
    log.adapt_calls = ctl.adapt_calls;
    log.planner_calls = ctl.planner_calls;
    log.runtime_s = start.elapsed().as_secs_f64();
    Ok(log)
}

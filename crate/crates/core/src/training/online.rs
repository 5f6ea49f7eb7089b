use rand::{Rng as _, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::phase2::{am_gradient_step, Targets};
use super::TrainError;
use crate::control::{summarize, ControlError, Controller, EpisodeConfig, EpisodeLog, EpisodeSummary};
use crate::data::ReplayBuffer;
use crate::envs::Env;
use crate::models::{param_hash, Checkpoint};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    pub episodes: usize,
    /// Probability of a random action at each step.
    pub epsilon: f64,
    /// Run the final episode without exploration.
    pub greedy_last: bool,
    /// Control steps between adaptive-module updates.
    pub update_period: usize,
    pub batch_size: usize,
    /// Gradient steps per update.
    pub gradient_steps: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub buffer_capacity: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            episodes: 5,
            epsilon: 0.1,
            greedy_last: true,
            update_period: 50,
            batch_size: 64,
            gradient_steps: 20,
            lr: 1e-3,
            grad_clip: 10.0,
            buffer_capacity: 10_000,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(TrainError::Contract(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if self.buffer_capacity <= self.batch_size || self.batch_size == 0 {
            return Err(TrainError::Contract("buffer capacity must exceed a positive batch size".into()));
        }
        if self.update_period == 0 {
            return Err(TrainError::Contract("update period must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OnlineEpisode {
    pub log: EpisodeLog,
    pub summary: EpisodeSummary,
    pub explored_steps: usize,
    /// Set when the simulator failed; the episode's data was dropped.
    pub discarded: Option<String>,
}

#[derive(Clone, Debug)]
pub struct OnlineReport {
    pub checkpoint: Checkpoint,
    pub episodes: Vec<OnlineEpisode>,
    pub updates: usize,
    pub update_losses: Vec<f64>,
}

/// Closed-loop data gathering with periodic adaptive-module fine-tuning:
/// each step explores with probability `epsilon`, otherwise plans with
/// MPPI; `(history window, e_k)` pairs go to a replay buffer and every
/// `update_period` steps the adaptive module is regressed onto the frozen
/// encoder's `g(e_k)` over sampled minibatches. Only the adaptive module
/// changes.
pub fn run_online(
    env: &mut Env,
    starts: &[Vec<f64>],
    ck: &Checkpoint,
    episode: &EpisodeConfig,
    cfg: &OnlineConfig,
    seed: u64,
) -> Result<OnlineReport, TrainError> {
    cfg.validate()?;
    if starts.is_empty() {
        return Err(TrainError::Contract("no initial states".into()));
    }
    let mut ck = ck.clone();
    let frozen = param_hash(ck.state_net.params().iter().chain(ck.encoder.params()));
    let m = ck
        .adaptive
        .as_ref()
        .map(|a| a.history_len)
        .ok_or_else(|| TrainError::Contract("online learning needs an adaptive module".into()))?;
    let mut master = Rng::seed_from_u64(seed);
    let mut buffer: ReplayBuffer<(Vec<f64>, Vec<f64>)> = ReplayBuffer::new(cfg.buffer_capacity);
    let mut adam = Adam::new(cfg.lr, ck.adaptive.as_ref().unwrap().params().iter());
    let mut report = OnlineReport { checkpoint: ck.clone(), episodes: Vec::new(), updates: 0, update_losses: Vec::new() };
    let mut global_step = 0usize;

    for ep in 0..cfg.episodes {
        let greedy = cfg.greedy_last && ep + 1 == cfg.episodes;
        let eps = if greedy { 0.0 } else { cfg.epsilon };
        let mut ctl = Controller::new(&ck, episode, master.next_u64())?;
        let mut env_rng = Rng::seed_from_u64(master.next_u64());
        let mut coin = Rng::seed_from_u64(master.next_u64());
        let mut train_rng = Rng::seed_from_u64(master.next_u64());
        let x0 = starts[ep % starts.len()].clone();
        env.reset(x0.clone())?;
        let mut log = EpisodeLog { platform: Some(env.platform()), states: vec![x0], warm_start_steps: ctl.warm_start_steps(), ..Default::default() };
        let mut pending: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut explored = 0;
        let mut discarded = None;
        for k in 0..episode.steps {
            let x = env.state().to_vec();
            let e_obs = env.env_factors(&mut env_rng);
            let window = ctl.history_window(m).map(|w| w.flat());
            let (u, z) = if coin.random::<f64>() < eps {
                explored += 1;
                (ctl.explore(), None)
            } else {
                ctl.act(&ck, &x, &e_obs, k)?
            };
            let out = match env.step(&u, &mut env_rng) {
                Ok(o) => o,
                Err(e) => {
                    discarded = Some(ControlError::Simulator { step: k, source: e, log: Box::default() }.to_string());
                    pending.clear();
                    break;
                }
            };
            if let Some(w) = window {
                pending.push((w, out.e.clone()));
            }
            let c = ctl.observe(x, u.clone(), &out.x_next, k);
            log.states.push(out.x_next);
            log.actions.push(u);
            log.envs.push(out.e);
            log.latents.push(z);
            log.stage_costs.push(c);
            global_step += 1;
            if global_step % cfg.update_period == 0 {
                pending.drain(..).for_each(|p| buffer.push(p));
                if buffer.len() >= cfg.batch_size {
                    let loss = update(&mut ck, &mut adam, &buffer, cfg, &mut train_rng)?;
                    report.update_losses.push(loss);
                    report.updates += 1;
                }
            }
        }
        pending.drain(..).for_each(|p| buffer.push(p));
        log.adapt_calls = ctl.adapt_calls;
        log.planner_calls = ctl.planner_calls;
        let summary = summarize(&log, episode, false);
        report.episodes.push(OnlineEpisode { log, summary, explored_steps: explored, discarded });
    }
    if param_hash(ck.state_net.params().iter().chain(ck.encoder.params())) != frozen {
        return Err(TrainError::Contract("online learning modified the frozen networks".into()));
    }
    report.checkpoint = ck;
    Ok(report)
}

fn update(
    ck: &mut Checkpoint,
    adam: &mut Adam,
    buffer: &ReplayBuffer<(Vec<f64>, Vec<f64>)>,
    cfg: &OnlineConfig,
    rng: &mut Rng,
) -> Result<f64, TrainError> {
    let encoder = ck.encoder.clone();
    let am = ck.adaptive.as_mut().expect("checked by caller");
    let mut last = 0.0;
    for _ in 0..cfg.gradient_steps.max(1) {
        let batch = buffer.sample(cfg.batch_size, rng)?;
        let windows: Vec<f64> = batch.iter().flat_map(|(w, _)| w.iter().copied()).collect();
        let envs: Vec<f64> = batch.iter().flat_map(|(_, e)| e.iter().copied()).collect();
        let targets = encoder.encode_batch(&envs, batch.len());
        let prepared = am.prepare(&windows, batch.len());
        last = am_gradient_step(am, adam, &prepared, Targets::Fixed(&targets), batch.len(), cfg.grad_clip, rng)?;
    }
    Ok(last)
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grads, loss_multistep, valid_segments, RolloutSpec, SegmentBatch};
use super::optim::{Adam, ExpSchedule};
use super::{clip_global_norm, CurveRow, TrainError};
use crate::data::Dataset;
use crate::models::{Checkpoint, CheckpointMeta, DynamicsKind, EnvEncoder, Normalizer, StateNet};
use crate::numerics::SolverKind;
use crate::platform::Platform;
use crate::Rng;

/// Architecture of the state net and the environment encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub state_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub kind: DynamicsKind,
    pub solver: SolverKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_platform(Platform::DiffDrive)
    }
}

impl ModelConfig {
    pub fn for_platform(p: Platform) -> Self {
        Self {
            latent_dim: 8,
            state_hidden: match p {
                Platform::Quad => vec![64, 64, 64],
                _ => vec![64, 64],
            },
            encoder_hidden: vec![64],
            kind: DynamicsKind::Node,
            solver: SolverKind::ForwardEuler,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase1Config {
    pub model: ModelConfig,
    /// Rollout horizons of the curriculum, trained in order.
    pub horizons: Vec<usize>,
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    /// Cap on minibatches per epoch (0 = full pass over all segments).
    pub max_batches_per_epoch: usize,
    pub lr: ExpSchedule,
    /// Every `val_every`-th trajectory is held out (0 = no validation).
    pub val_every: usize,
    /// Cap on validation segments per evaluation.
    pub val_segments: usize,
    /// Global gradient-norm clip (0 = off).
    pub grad_clip: f64,
    /// Stop a stage after this many epochs without validation improvement
    /// (0 = never).
    pub patience: usize,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self::for_platform(Platform::DiffDrive)
    }
}

impl Phase1Config {
    pub fn for_platform(p: Platform) -> Self {
        let (horizons, epochs_per_stage, batch_size) = match p {
            Platform::Quad => ((1..=30).collect(), 10, 1024),
            Platform::DiffDrive => ((1..=10).collect(), 10, 512),
            Platform::Msd => ((1..=10).collect(), 10, 256),
        };
        Self {
            model: ModelConfig::for_platform(p),
            horizons,
            epochs_per_stage,
            batch_size,
            max_batches_per_epoch: 0,
            lr: ExpSchedule { start: 1e-3, end: 1e-4 },
            val_every: 10,
            val_segments: 1024,
            grad_clip: 0.0,
            patience: 10,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.horizons.first() != Some(&1) || self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TrainError::Contract(format!(
                "curriculum horizons must start at 1 and increase strictly, got {:?}",
                self.horizons
            )));
        }
        if self.batch_size == 0 || self.model.latent_dim == 0 {
            return Err(TrainError::Contract("batch size and latent size must be positive".into()));
        }
        if !(self.lr.start > 0.0 && self.lr.end > 0.0) {
            return Err(TrainError::Contract("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Phase1Output {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurveRow>,
}

/// Fits input/output normalisers from the data. For the NODE the output
/// scale is that of the finite-difference derivative `(x' - x) / dt`.
pub fn fit_normalizers(net: &mut StateNet, enc: &mut EnvEncoder, ds: &Dataset, dt: f64) {
    let (n, m, p) = (net.state_dim(), net.action_dim(), net.platform.env_dim());
    net.state_norm = Normalizer::fit(ds.transitions().map(|t| t.x.as_slice()), n);
    net.action_norm = Normalizer::fit(ds.transitions().map(|t| t.u.as_slice()), m);
    enc.env_norm = Normalizer::fit(ds.transitions().map(|t| t.e.as_slice()), p);
    let outputs: Vec<Vec<f64>> = ds
        .transitions()
        .map(|t| match net.kind {
            DynamicsKind::Node => t.x_next.iter().zip(&t.x).map(|(a, b)| (a - b) / dt).collect(),
            DynamicsKind::DiscreteMap => t.x_next.clone(),
        })
        .collect();
    net.output_norm = Normalizer::fit(outputs.iter().map(Vec::as_slice), n);
}

fn eval_loss(net: &StateNet, enc: &EnvEncoder, ds: &Dataset, segs: &[(usize, usize)], h: usize, spec: &RolloutSpec) -> Result<f64, TrainError> {
    if segs.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in segs.chunks(256) {
        let b = SegmentBatch::from_segments(ds, chunk, h)?;
        total += loss_multistep(net, enc, &b, spec) * chunk.len() as f64;
    }
    Ok(total / segs.len() as f64)
}

/// Phase 1: joint training of the state net and the environment encoder
/// on multistep rollouts with privileged factors, over a horizon
/// curriculum.
pub fn train_phase1(ds: &Dataset, cfg: &Phase1Config, dt: f64, seed: u64) -> Result<Phase1Output, TrainError> {
    ds.validate()?;
    if ds.num_transitions() == 0 {
        return Err(TrainError::Contract("empty training dataset".into()));
    }
    cfg.validate()?;
    let mut distinct: Vec<&[f64]> = Vec::new();
    for t in ds.transitions() {
        if !distinct.contains(&t.e.as_slice()) {
            distinct.push(&t.e);
            if distinct.len() >= 2 {
                break;
            }
        }
    }
    if distinct.len() < 2 {
        return Err(TrainError::Contract("training data must cover at least two environment values".into()));
    }
    if !(dt > 0.0) {
        return Err(TrainError::Contract(format!("control period must be positive, got {dt}")));
    }
    let platform = ds.platform;
    let mut rng = Rng::seed_from_u64(seed);
    let mc = &cfg.model;
    let mut net = StateNet::new(platform, mc.kind, mc.latent_dim, mc.state_hidden.clone(), &mut rng)?;
    let mut enc = EnvEncoder::new(platform, mc.latent_dim, mc.encoder_hidden.clone(), &mut rng)?;
    let (train, val) = if cfg.val_every > 1 { ds.split_every(cfg.val_every) } else { (ds.clone(), Dataset::new(platform)) };
    fit_normalizers(&mut net, &mut enc, &train, dt);
    let spec = RolloutSpec::normalized(&net, dt, mc.solver);

    let mut adam_net = Adam::new(cfg.lr.start, net.params());
    let mut adam_enc = Adam::new(cfg.lr.start, enc.params());
    let total_epochs = cfg.horizons.len() * cfg.epochs_per_stage;
    let mut curve = Vec::new();
    let mut epoch_global = 0;
    for &h in &cfg.horizons {
        let stage = format!("phase1_h{h}");
        let mut segs = valid_segments(&train, h, 0);
        if segs.is_empty() {
            return Err(TrainError::Contract(format!("no training segment of horizon {h}")));
        }
        let mut val_segs = valid_segments(&val, h, 0);
        val_segs.shuffle(&mut rng);
        val_segs.truncate(cfg.val_segments.max(1));
        let mut best = f64::INFINITY;
        let mut stale = 0;
        for epoch in 0..cfg.epochs_per_stage {
            let lr = cfg.lr.at(epoch_global, total_epochs);
            adam_net.lr = lr;
            adam_enc.lr = lr;
            segs.shuffle(&mut rng);
            let mut n_batches = segs.len().div_ceil(cfg.batch_size);
            if cfg.max_batches_per_epoch > 0 {
                n_batches = n_batches.min(cfg.max_batches_per_epoch);
            }
            let mut train_loss = 0.0;
            for b in 0..n_batches {
                let end = ((b + 1) * cfg.batch_size).min(segs.len());
                let batch = SegmentBatch::from_segments(&train, &segs[b * cfg.batch_size..end], h)?;
                let (loss, mut gn, mut ge) = loss_and_grads(&net, &enc, &batch, &spec)?;
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { stage, epoch });
                }
                let mut all: Vec<Vec<f64>> = gn.drain(..).chain(ge.drain(..)).collect();
                clip_global_norm(&mut all, cfg.grad_clip);
                let ge = all.split_off(net.params().len());
                adam_net.step(net.params_mut().iter_mut().collect(), &all);
                adam_enc.step(enc.params_mut().iter_mut().collect(), &ge);
                train_loss += loss;
            }
            train_loss /= n_batches as f64;
            let val_loss = eval_loss(&net, &enc, &val, &val_segs, h, &spec)?;
            if !train_loss.is_finite() || val_loss.is_infinite() {
                return Err(TrainError::Diverged { stage, epoch });
            }
            curve.push(CurveRow { stage: stage.clone(), epoch: epoch_global, train_loss, val_loss, lr, metric: None });
            epoch_global += 1;
            if cfg.patience > 0 && val_loss.is_finite() {
                if val_loss < best {
                    best = val_loss;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        break;
                    }
                }
            }
        }
    }
    let checkpoint = Checkpoint {
        meta: CheckpointMeta { phase: 1, epoch: epoch_global, seed, dt, solver: mc.solver },
        state_net: net,
        encoder: enc,
        adaptive: None,
    };
    Ok(Phase1Output { checkpoint, curve })
}

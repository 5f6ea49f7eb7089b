use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, ExpSchedule};
use super::{clip_global_norm, CurveRow, TrainError};
use crate::analysis::r_squared;
use crate::data::Dataset;
use crate::envs::wrap_angle;
use crate::models::{param_hash, AdaptiveModule, AdaptiveSpec, Checkpoint, EnvEncoder, Normalizer};
use crate::numerics::{Graph, Tensor, Var};
use crate::platform::Platform;
use crate::Rng;

/// Adaptive-module backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum AdaptiveArch {
    Mlp {
        hidden: Vec<usize>,
    },
    Cnn {
        channels: Vec<usize>,
        kernels: Vec<usize>,
        dropout: f64,
        head_hidden: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub history_len: usize,
    pub arch: AdaptiveArch,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self::for_platform(Platform::DiffDrive)
    }
}

impl AdaptiveConfig {
    pub fn for_platform(p: Platform) -> Self {
        match p {
            Platform::Quad => Self {
                history_len: 10,
                arch: AdaptiveArch::Cnn {
                    channels: vec![32, 32, 32],
                    kernels: vec![5, 3, 3],
                    dropout: 0.1,
                    head_hidden: vec![64],
                },
            },
            _ => Self {
                history_len: 5,
                arch: AdaptiveArch::Mlp { hidden: vec![64] },
            },
        }
    }

    pub fn spec(&self, p: Platform, latent_dim: usize) -> AdaptiveSpec {
        match &self.arch {
            AdaptiveArch::Mlp { hidden } => AdaptiveModule::mlp_spec(p, self.history_len, latent_dim, hidden.clone()),
            AdaptiveArch::Cnn { channels, kernels, dropout, head_hidden } => AdaptiveModule::cnn_spec(
                p,
                self.history_len,
                latent_dim,
                channels.clone(),
                kernels.clone(),
                *dropout,
                head_hidden.clone(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase2Config {
    pub adaptive: AdaptiveConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cap on minibatches per epoch (0 = full pass).
    pub max_batches_per_epoch: usize,
    pub lr: ExpSchedule,
    pub val_every: usize,
    pub grad_clip: f64,
    /// Keep the environment encoder fixed as well as the state net. When
    /// false the encoder is updated by the same regression loss.
    pub freeze_encoder: bool,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self::for_platform(Platform::DiffDrive)
    }
}

impl Phase2Config {
    pub fn for_platform(p: Platform) -> Self {
        let (lr, batch_size) = match p {
            Platform::Quad => (1e-4, 1024),
            _ => (1e-3, 128),
        };
        Self {
            adaptive: AdaptiveConfig::for_platform(p),
            epochs: 100,
            batch_size,
            max_batches_per_epoch: 0,
            lr: ExpSchedule { start: lr, end: lr },
            val_every: 10,
            grad_clip: 0.0,
            freeze_encoder: true,
        }
    }
}

/// Regression pairs: flattened windows `(x_i, u_i)_{i=k-M}^{k-1}` and the
/// frozen encoder's latent `g(e_k)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdaptiveSamples {
    pub rows: usize,
    pub windows: Vec<f64>,
    /// Raw factors `e_k`, one row per sample.
    pub envs: Vec<f64>,
    pub targets: Vec<f64>,
}

pub fn adaptive_samples(ds: &Dataset, encoder: &EnvEncoder, history_len: usize) -> Result<AdaptiveSamples, TrainError> {
    let mut out = AdaptiveSamples::default();
    for t in &ds.trajectories {
        for k in history_len..t.len() {
            out.windows.extend(t.history_window(k, history_len)?.flat());
            out.envs.extend_from_slice(&t.transitions[k].e);
            out.rows += 1;
        }
    }
    out.targets = encoder.encode_batch(&out.envs, out.rows);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Phase2Output {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurveRow>,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// Regression targets for one adaptive-module step.
pub(crate) enum Targets<'a> {
    /// Precomputed latents of a frozen encoder.
    Fixed(&'a [f64]),
    /// Raw factors passed through a trainable encoder.
    Encoded { encoder: &'a mut EnvEncoder, adam: &'a mut Adam, envs: &'a [f64] },
}

/// One Adam step of `MSE(h(window), target)` on prepared windows. Errors
/// with `NonFinite` if the loss is not finite.
pub(crate) fn am_gradient_step(
    am: &mut AdaptiveModule,
    adam: &mut Adam,
    prepared: &[f64],
    targets: Targets<'_>,
    rows: usize,
    grad_clip: f64,
    rng: &mut Rng,
) -> Result<f64, TrainError> {
    let mut g = Graph::new();
    let params: Vec<Var> = am.params().into_iter().map(|t| g.param(t)).collect();
    let x = g.constant(Tensor::matrix(rows, am.input_width(), prepared.to_vec())?);
    let pred = am.forward_graph(&mut g, x, &params, Some(rng))?;
    let (y, enc_params) = match &targets {
        Targets::Fixed(t) => (g.constant(Tensor::matrix(rows, am.latent_dim, t.to_vec())?), Vec::new()),
        Targets::Encoded { encoder, envs, .. } => {
            let ep: Vec<Var> = encoder.params().iter().map(|t| g.param(t.clone())).collect();
            let e = g.constant(Tensor::matrix(rows, encoder.platform.env_dim(), envs.to_vec())?);
            (encoder.forward_graph(&mut g, e, &ep)?, ep)
        }
    };
    let loss = g.mse(pred, y)?;
    let lv = g.value(loss).item();
    if !lv.is_finite() {
        return Err(TrainError::Model(crate::models::ModelError::NonFinite));
    }
    g.backward(loss)?;
    let grad = |v: &Var| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_default();
    let mut grads: Vec<Vec<f64>> = params.iter().chain(&enc_params).map(grad).collect();
    clip_global_norm(&mut grads, grad_clip);
    let enc_grads = grads.split_off(params.len());
    adam.step(am.params_mut(), &grads);
    if let Targets::Encoded { encoder, adam, .. } = targets {
        adam.step(encoder.params_mut().iter_mut().collect(), &enc_grads);
    }
    Ok(lv)
}

/// Phase 2: regress the adaptive module onto the latent of the phase-1
/// encoder. The state net is left bit-identical, and so is the encoder
/// unless `freeze_encoder` is off.
pub fn train_phase2(ds: &Dataset, phase1: &Checkpoint, cfg: &Phase2Config, seed: u64) -> Result<Phase2Output, TrainError> {
    ds.validate()?;
    let platform = phase1.platform();
    if ds.platform != platform {
        return Err(TrainError::Contract(format!("{} data for a {platform} model", ds.platform)));
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::Contract("batch size must be positive".into()));
    }
    let frozen = param_hash(phase1.state_net.params());
    let mut encoder = phase1.encoder.clone();
    let mut adam_enc = Adam::new(cfg.lr.start, encoder.params());
    let mut rng = Rng::seed_from_u64(seed);
    let latent = phase1.state_net.latent_dim;
    let m = cfg.adaptive.history_len;
    let mut am = AdaptiveModule::new(platform, m, latent, cfg.adaptive.spec(platform, latent), &mut rng)?;

    let (train, val) = if cfg.val_every > 1 { ds.split_every(cfg.val_every) } else { (ds.clone(), Dataset::new(platform)) };
    let heading = platform.heading_index();
    let states: Vec<Vec<f64>> = train
        .transitions()
        .map(|t| {
            let mut x = t.x.clone();
            if let Some(h) = heading {
                x[h] = wrap_angle(x[h]);
            }
            x
        })
        .collect();
    am.state_norm = Normalizer::fit(states.iter().map(Vec::as_slice), platform.state_dim());
    am.action_norm = Normalizer::fit(train.transitions().map(|t| t.u.as_slice()), platform.action_dim());

    let tr = adaptive_samples(&train, &phase1.encoder, m)?;
    let va = adaptive_samples(&val, &phase1.encoder, m)?;
    if tr.rows == 0 {
        return Err(TrainError::Contract(format!("no trajectory longer than the history length {m}")));
    }
    let width = am.input_width();
    let prepared = am.prepare(&tr.windows, tr.rows);

    let mut adam = Adam::new(cfg.lr.start, am.params().iter());
    let mut order: Vec<usize> = (0..tr.rows).collect();
    let mut curve = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch, cfg.epochs);
        adam.lr = lr;
        adam_enc.lr = lr;
        order.shuffle(&mut rng);
        let mut n_batches = tr.rows.div_ceil(cfg.batch_size);
        if cfg.max_batches_per_epoch > 0 {
            n_batches = n_batches.min(cfg.max_batches_per_epoch);
        }
        let mut train_loss = 0.0;
        for b in 0..n_batches {
            let idx = &order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(tr.rows)];
            let mut xb = Vec::with_capacity(idx.len() * width);
            let mut yb = Vec::with_capacity(idx.len() * latent);
            let mut eb = Vec::new();
            let p = platform.env_dim();
            for &i in idx {
                xb.extend_from_slice(&prepared[i * width..(i + 1) * width]);
                yb.extend_from_slice(&tr.targets[i * latent..(i + 1) * latent]);
                eb.extend_from_slice(&tr.envs[i * p..(i + 1) * p]);
            }
            let targets = if cfg.freeze_encoder {
                Targets::Fixed(&yb)
            } else {
                Targets::Encoded { encoder: &mut encoder, adam: &mut adam_enc, envs: &eb }
            };
            let lv = am_gradient_step(&mut am, &mut adam, &xb, targets, idx.len(), cfg.grad_clip, &mut rng)
                .map_err(|e| match e {
                    TrainError::Model(crate::models::ModelError::NonFinite) => TrainError::Diverged { stage: "phase2".into(), epoch },
                    other => other,
                })?;
            train_loss += lv;
        }
        train_loss /= n_batches as f64;
        let (val_loss, metric) = if va.rows > 0 {
            let pred = am.encode_flat_batch(&va.windows, va.rows)?;
            let target = if cfg.freeze_encoder { va.targets.clone() } else { encoder.encode_batch(&va.envs, va.rows) };
            (mse(&pred, &target), Some(r_squared(&pred, &target, latent)))
        } else {
            (f64::NAN, None)
        };
        curve.push(CurveRow { stage: "phase2".into(), epoch, train_loss, val_loss, lr, metric });
    }

    let mut checkpoint = phase1.clone();
    checkpoint.encoder = encoder;
    checkpoint.adaptive = Some(am);
    checkpoint.meta.phase = 2;
    checkpoint.meta.epoch = cfg.epochs;
    checkpoint.meta.seed = seed;
    if param_hash(checkpoint.state_net.params()) != frozen
        || (cfg.freeze_encoder && checkpoint.encoder != phase1.encoder)
    {
        return Err(TrainError::Contract("phase 2 modified the frozen networks".into()));
    }
    Ok(Phase2Output { checkpoint, curve })
}

//! Two-phase training of the latent dynamics model, plus the online
//! adaptation loop.

mod loss;
mod online;
mod optim;
mod phase1;
mod phase2;

pub use loss::{loss_and_grads, loss_multistep, multistep_loss_graph, valid_segments, RolloutSpec, SegmentBatch};
pub use online::{run_online, OnlineConfig, OnlineEpisode, OnlineReport};
pub use optim::{Adam, ExpSchedule};
pub use phase1::{fit_normalizers, train_phase1, ModelConfig, Phase1Config, Phase1Output};
pub use phase2::{adaptive_samples, train_phase2, AdaptiveArch, AdaptiveConfig, AdaptiveSamples, Phase2Config, Phase2Output};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlError;
use crate::data::DataError;
use crate::envs::EnvError;
use crate::models::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged in {stage} at epoch {epoch} (non-finite loss)")]
    Diverged { stage: String, epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row of a learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub stage: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Extra validation metric (R^2 for the adaptive module).
    pub metric: Option<f64>,
}

pub fn write_curve_csv(rows: &[CurveRow], path: &Path) -> Result<(), TrainError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "stage,epoch,train_loss,val_loss,lr,metric")?;
    for r in rows {
        let metric = r.metric.map(|m| m.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{},{},{},{}", r.stage, r.epoch, r.train_loss, r.val_loss, r.lr, metric)?;
    }
    f.flush()?;
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
pub(crate) fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![vec![3.0], vec![4.0]];
        clip_global_norm(&mut g, 1.0);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
        let mut h = vec![vec![0.1]];
        clip_global_norm(&mut h, 1.0);
        assert_eq!(h[0][0], 0.1);
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let rows = vec![CurveRow { stage: "h1".into(), epoch: 0, train_loss: 1.0, val_loss: 2.0, lr: 1e-3, metric: None }];
        write_curve_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("stage,epoch"));
    }
}

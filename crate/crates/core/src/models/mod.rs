//! Learned dynamics: state network, environment encoder, adaptive module.

mod checkpoint;
mod conv;
mod encoder;
mod mlp;
mod normalize;
mod state_net;

pub use checkpoint::{param_hash, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use conv::{Conv1dSpec, ConvNet};
pub use encoder::{AdaptiveModule, AdaptiveSpec, EnvEncoder};
pub use mlp::{Activation, Mlp, MlpSpec};
pub use normalize::Normalizer;
pub use state_net::{DynamicsKind, StateNet};

use crate::numerics::NumericsError;
use crate::platform::Platform;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("{what} dimension mismatch: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("history window has {got} pairs, model expects {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("model produced a non-finite value")]
    NonFinite,
    #[error("checkpoint is for platform {found}, expected {expected}")]
    PlatformMismatch { expected: Platform, found: Platform },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

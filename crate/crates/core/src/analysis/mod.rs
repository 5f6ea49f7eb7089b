//! Metrics, long-horizon prediction-error curves, and the error-propagation
//! and convergence bounds with their empirical checks.

mod bounds;
mod curves;
mod lipschitz;
mod metrics;

pub use bounds::{continuous_bound, discrete_bound, eps_f, gamma_n, uub_radius, ConvergenceParams};
pub use curves::{
    empirical_bound_check, error_curve, BoundReport, ErrorCurve, LatentSource, LearnedPredictor, SegmentPredictor,
    SimulatorPredictor,
};
pub use lipschitz::{estimate_lipschitz, LipschitzEstimate};
pub use metrics::{quat_angle_error, r_squared, rmse, success_rate};

use crate::data::DataError;
use crate::envs::EnvError;
use crate::models::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("quaternion is not unit norm (|q| = {0})")]
    NonUnit(f64),
    #[error("horizon {horizon} exceeds every test trajectory")]
    Horizon { horizon: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

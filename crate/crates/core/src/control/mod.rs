//! MPPI over the learned dynamics, task costs, and the closed-loop episode
//! runner.

mod cost;
mod episode;
mod mppi;

pub use cost::{CostCursor, CostSpec, GoalReach, PathTrack, PoseTrack, Quadratic};
pub use episode::{
    position_velocity, run_episode, summarize, ControlMode, Controller, EpisodeConfig, EpisodeLog, EpisodeSummary,
    WarmStart,
};
pub use mppi::{
    action_bounds, initial_nominal, mppi_plan, softmax_weights, ControlResult, LatentModel, LinearModel, MppiConfig,
    PlannerModel,
};

use crate::data::DataError;
use crate::envs::EnvError;
use crate::models::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("invalid control setup: {0}")]
    Invalid(String),
    #[error("every sampled rollout has a non-finite cost")]
    NoFiniteCost,
    #[error("simulator failed at step {step}: {source}")]
    Simulator {
        step: usize,
        source: EnvError,
        log: Box<EpisodeLog>,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

//! Trajectory records, dataset collection and persistence, history windows
//! and the replay buffer.

mod collect;
mod io;
mod replay;

pub use collect::{
    collect, collect_diffdrive, collect_msd, collect_quad, CollectConfig, DiffDriveCollect, MsdCollect, QuadCollect,
};
pub use io::DATASET_VERSION;
pub use replay::ReplayBuffer;

use crate::envs::EnvError;
use crate::platform::Platform;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("cannot sample from an empty buffer")]
    Empty,
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One `(x, u, e, x_next)` record.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub e: Vec<f64>,
    pub x_next: Vec<f64>,
    pub step_index: usize,
}

/// Contiguous transitions from one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub platform: Platform,
    pub transitions: Vec<Transition>,
    /// Free-form label of the environment the episode ran in.
    pub schedule_id: String,
    pub seed: u64,
}

impl Trajectory {
    pub fn new(platform: Platform, schedule_id: impl Into<String>, seed: u64) -> Self {
        Self {
            platform,
            transitions: Vec::new(),
            schedule_id: schedule_id.into(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// State `k` for `k` in `0..=len`.
    pub fn state(&self, k: usize) -> &[f64] {
        if k < self.len() {
            &self.transitions[k].x
        } else {
            &self.transitions[k - 1].x_next
        }
    }

    /// Checks widths and that consecutive records chain.
    pub fn validate(&self) -> Result<(), DataError> {
        let p = self.platform;
        for (i, t) in self.transitions.iter().enumerate() {
            if t.x.len() != p.state_dim()
                || t.x_next.len() != p.state_dim()
                || t.u.len() != p.action_dim()
                || t.e.len() != p.env_dim()
            {
                return Err(DataError::Contract(format!("record {i} has wrong widths for {p}")));
            }
            if i > 0 && self.transitions[i - 1].x_next != t.x {
                return Err(DataError::Contract(format!("record {i} does not continue record {}", i - 1)));
            }
        }
        Ok(())
    }

    /// The `m` pairs `(x_i, u_i)`, `i = k-m .. k-1`.
    pub fn history_window(&self, k: usize, m: usize) -> Result<HistoryWindow, DataError> {
        if m == 0 || k < m {
            return Err(DataError::Contract(format!(
                "history of {m} pairs ending before step {k} needs k >= m >= 1"
            )));
        }
        if k > self.len() {
            return Err(DataError::Contract(format!(
                "step {k} beyond trajectory of length {}",
                self.len()
            )));
        }
        let slice = &self.transitions[k - m..k];
        HistoryWindow::new(
            slice.iter().map(|t| t.x.clone()).collect(),
            slice.iter().map(|t| t.u.clone()).collect(),
        )
    }
}

/// `M` consecutive state-action pairs, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryWindow {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl HistoryWindow {
    pub fn new(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Result<Self, DataError> {
        if states.len() != actions.len() || states.is_empty() {
            return Err(DataError::Contract(format!(
                "window needs matching non-empty state/action lists, got {} and {}",
                states.len(),
                actions.len()
            )));
        }
        Ok(Self { states, actions })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `[x_0, u_0, x_1, u_1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (x, u) in self.states.iter().zip(&self.actions) {
            out.extend_from_slice(x);
            out.extend_from_slice(u);
        }
        out
    }

    /// Appends the newest pair and drops the oldest.
    pub fn push(&mut self, x: Vec<f64>, u: Vec<f64>) {
        self.states.remove(0);
        self.actions.remove(0);
        self.states.push(x);
        self.actions.push(u);
    }
}

/// A collection of trajectories for one platform.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub platform: Platform,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(platform: Platform) -> Self {
        Self {
            platform,
            trajectories: Vec::new(),
        }
    }

    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }

    pub fn transitions_mut(&mut self) -> impl Iterator<Item = &mut Transition> {
        self.trajectories.iter_mut().flat_map(|t| t.transitions.iter_mut())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for t in &self.trajectories {
            if t.platform != self.platform {
                return Err(DataError::Contract("mixed platforms in dataset".into()));
            }
            t.validate()?;
        }
        Ok(())
    }

    /// Deterministic split: every `k`-th trajectory (by index) goes to the
    /// second set.
    pub fn split_every(&self, k: usize) -> (Dataset, Dataset) {
        let mut a = Dataset::new(self.platform);
        let mut b = Dataset::new(self.platform);
        for (i, t) in self.trajectories.iter().enumerate() {
            if k > 0 && i % k == k - 1 {
                b.trajectories.push(t.clone());
            } else {
                a.trajectories.push(t.clone());
            }
        }
        (a, b)
    }
}

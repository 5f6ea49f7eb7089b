pub mod analysis;
pub mod control;
pub mod data;
pub mod envs;
pub mod models;
pub mod numerics;
pub mod platform;
pub mod training;

pub use platform::Platform;

/// Seeded generator used throughout; identical seeds give identical runs.
pub type Rng = rand_chacha::ChaCha8Rng;

//! Numeric substrate: tensors, reverse-mode differentiation and fixed-step
//! integrators.

pub mod graph;
pub mod ode;
pub mod quat;
pub mod tensor;

pub use graph::{ConvGeom, Graph, Var};
pub use ode::{integrate, ode_step, ode_step_graph, Solver, SolverKind};
pub use tensor::{gemm, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value at integration step {step}")]
    NonFinite { step: usize },
}

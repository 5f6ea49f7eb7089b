use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::numerics::{ode_step, SolverKind};

/// Mass-spring-damper `m x'' = -k x - b x' + F`; the mass is the
/// environment factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsdParams {
    pub k: f64,
    pub b: f64,
    pub dt: f64,
    pub substeps: usize,
    pub solver: SolverKind,
}

impl Default for MsdParams {
    fn default() -> Self {
        Self {
            k: 1.0,
            b: 0.5,
            dt: 0.05,
            substeps: 1,
            solver: SolverKind::Rk4,
        }
    }
}

impl MsdParams {
    /// Continuous-time `(A, B)` for mass `m`, row-major 2x2 and 2x1.
    pub fn linear(&self, m: f64) -> ([f64; 4], [f64; 2]) {
        ([0.0, 1.0, -self.k / m, -self.b / m], [0.0, 1.0 / m])
    }

    pub fn derivative(&self, x: &[f64], force: f64, mass: f64) -> Vec<f64> {
        vec![x[1], (-self.k * x[0] - self.b * x[1] + force) / mass]
    }

    pub fn step(&self, x: &[f64], force: f64, mass: f64, dt: f64) -> Result<Vec<f64>, EnvError> {
        if mass <= 0.0 {
            return Err(EnvError::Invalid(format!("mass {mass} must be positive")));
        }
        let field = |x: &[f64], u: &[f64], e: &[f64], _t: f64| self.derivative(x, u[0], e[0]);
        let h = dt / self.substeps.max(1) as f64;
        let mut s = x.to_vec();
        for _ in 0..self.substeps.max(1) {
            s = ode_step(&field, &s, &[force], &[mass], 0.0, self.solver, h)?;
        }
        Ok(s)
    }
}

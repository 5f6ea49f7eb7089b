use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::numerics::{ode_step, quat, SolverKind};

/// Rigid-body quadrotor at wrench level with a first-order body-rate loop.
///
/// `p' = v`, `m v' = m g + R e3 f + d`, `q' = q ⊗ (0, w) / 2`,
/// `J w' = J w × w + tau`, `tau = J K_w (w_des - w) + w × J w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadParams {
    pub mass: f64,
    /// Diagonal of the inertia matrix.
    pub inertia: [f64; 3],
    pub rate_gain: [f64; 3],
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            inertia: [0.01, 0.01, 0.02],
            rate_gain: [20.0, 20.0, 20.0],
            gravity: 9.81,
            dt: 0.02,
            substeps: 2,
        }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl QuadParams {
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    /// Derivative of `[p, v, q, w]` (13) under `[f, w_des]` and wind `d`.
    pub fn field(&self, s: &[f64], u: &[f64], d: &[f64]) -> Vec<f64> {
        let q = &s[6..10];
        let w = [s[10], s[11], s[12]];
        let thrust = quat::rotate(q, [0.0, 0.0, u[0]]);
        let mut out = vec![0.0; 13];
        out[..3].copy_from_slice(&s[3..6]);
        for i in 0..3 {
            out[3 + i] = (thrust[i] + d[i]) / self.mass;
        }
        out[5] -= self.gravity;
        out[6..10].copy_from_slice(&quat::derivative(q, &w));
        let j = self.inertia;
        let jw = [j[0] * w[0], j[1] * w[1], j[2] * w[2]];
        let gyro = cross(w, jw);
        let tau: Vec<f64> = (0..3)
            .map(|i| j[i] * self.rate_gain[i] * (u[1 + i] - w[i]) + gyro[i])
            .collect();
        let jwxw = cross(jw, w);
        for i in 0..3 {
            out[10 + i] = (jwxw[i] + tau[i]) / j[i];
        }
        out
    }

    /// One control step. `x` is `[p, v, q]`; body rates `omega` are hidden
    /// simulator state updated in place.
    pub fn step(&self, x: &[f64], omega: &mut [f64; 3], u: &[f64], d: &[f64]) -> Result<Vec<f64>, EnvError> {
        if (quat::norm(&x[6..10]) - 1.0).abs() > 1e-6 {
            return Err(EnvError::Invalid("attitude quaternion is not unit norm".into()));
        }
        let field = |s: &[f64], u: &[f64], d: &[f64], _t: f64| self.field(s, u, d);
        let mut s = x.to_vec();
        s.extend_from_slice(omega);
        let n = self.substeps.max(1);
        let h = self.dt / n as f64;
        for _ in 0..n {
            s = ode_step(&field, &s, u, d, 0.0, SolverKind::Rk4, h)?;
            quat::normalize(&mut s[6..10]);
        }
        omega.copy_from_slice(&s[10..13]);
        s.truncate(10);
        Ok(s)
    }
}

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::numerics::{ode_step, SolverKind};

/// Low-level controller gains turning `[u_forward, u_turn]` into wheel
/// torques.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp_v: f64,
    pub ki_v: f64,
    pub kp_h: f64,
    pub kd_h: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp_v: 0.1,
            ki_v: 0.05,
            kp_h: 0.01,
            kd_h: 2e-5,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), EnvError> {
        if [self.kp_v, self.ki_v, self.kp_h, self.kd_h].iter().all(|g| *g > 0.0) {
            Ok(())
        } else {
            Err(EnvError::Invalid("PID gains must be positive".into()))
        }
    }
}

/// Controller memory carried between control steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PidState {
    /// `sum_j e_v[j] * dt`
    pub integral: f64,
    pub prev_turn: f64,
}

/// Equation-based friction surrogate of a two-wheeled robot.
///
/// Internal speed `v` and yaw rate `w` obey
/// `v' = (k_t(mu_L) tau_L + k_t(mu_R) tau_R) / (m r) - (b_v + c_r mu_roll g) tanh(v / v_eps)`
/// `w' = (k_t(mu_R) tau_R - k_t(mu_L) tau_L) W / (2 I r) - (b_w + c_t mu_turn) w`
/// with traction efficiency `k_t(mu) = mu / (mu + mu_0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffDriveParams {
    pub mass: f64,
    pub wheel_radius: f64,
    pub track_width: f64,
    pub inertia: f64,
    pub b_v: f64,
    /// Yaw damping independent of the surface.
    pub b_w: f64,
    pub c_r: f64,
    pub c_t: f64,
    pub v_eps: f64,
    pub mu0: f64,
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
    pub gains: PidGains,
}

impl Default for DiffDriveParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            wheel_radius: 0.03,
            track_width: 0.15,
            inertia: 0.005,
            b_v: 0.2,
            b_w: 4.0,
            c_r: 0.5,
            c_t: 50.0,
            v_eps: 0.01,
            mu0: 0.5,
            gravity: 9.81,
            dt: 0.04,
            substeps: 4,
            gains: PidGains::default(),
        }
    }
}

/// Friction triples of the two training surfaces,
/// `[mu_sliding, mu_turning, mu_rolling]`.
pub const SLIPPERY: [f64; 3] = [0.7, 0.04, 0.01];
pub const NON_SLIPPERY: [f64; 3] = [2.0, 0.005, 0.0];

impl DiffDriveParams {
    fn traction(&self, mu: f64) -> f64 {
        mu / (mu + self.mu0)
    }

    /// Left and right wheel contact points for a robot at `(x, y, theta)`.
    pub fn wheel_positions(&self, x: f64, y: f64, theta: f64) -> ([f64; 2], [f64; 2]) {
        let h = 0.5 * self.track_width;
        let (s, c) = theta.sin_cos();
        ([x - h * s, y + h * c], [x + h * s, y - h * c])
    }

    /// PID law: velocity P+I on `e_v = u_forward - v`, heading P+D on
    /// `u_turn`. Returns `[tau_left, tau_right]` and updates `pid`.
    pub fn lowlevel(&self, u_cmd: &[f64], v: f64, pid: &mut PidState, dt: f64) -> [f64; 2] {
        let g = &self.gains;
        let e_v = u_cmd[0] - v;
        pid.integral += e_v * dt;
        let drive = g.kp_v * e_v + g.ki_v * pid.integral;
        let turn = g.kp_h * u_cmd[1] + g.kd_h * (u_cmd[1] - pid.prev_turn) / dt;
        pid.prev_turn = u_cmd[1];
        [drive + turn, drive - turn]
    }

    /// Derivative of `[x, y, theta, v, w]` under wheel torques and the
    /// six friction factors `[left triple, right triple]`.
    pub fn field(&self, s: &[f64], tau: &[f64], e: &[f64]) -> Vec<f64> {
        let (theta, v, w) = (s[2], s[3], s[4]);
        let (kl, kr) = (self.traction(e[0]), self.traction(e[3]));
        let mu_turn = 0.5 * (e[1] + e[4]);
        let mu_roll = 0.5 * (e[2] + e[5]);
        let r = self.wheel_radius;
        let v_dot = (kl * tau[0] + kr * tau[1]) / (self.mass * r)
            - (self.b_v + self.c_r * mu_roll * self.gravity) * (v / self.v_eps).tanh();
        let w_dot = (kr * tau[1] - kl * tau[0]) * self.track_width / (2.0 * self.inertia * r)
            - (self.b_w + self.c_t * mu_turn) * w;
        vec![v * theta.cos(), v * theta.sin(), w, v_dot, w_dot]
    }

    /// One control step. `x` is the observed `[x, y, theta, vx, vy, omega]`;
    /// `e` holds the friction under the left then right wheel.
    pub fn step(&self, x: &[f64], pid: &mut PidState, u_cmd: &[f64], e: &[f64]) -> Result<Vec<f64>, EnvError> {
        if e.iter().any(|m| *m < 0.0) {
            return Err(EnvError::Invalid("negative friction coefficient".into()));
        }
        let theta = x[2];
        let v = x[3] * theta.cos() + x[4] * theta.sin();
        let tau = self.lowlevel(u_cmd, v, pid, self.dt);
        let field = |s: &[f64], u: &[f64], e: &[f64], _t: f64| self.field(s, u, e);
        let n = self.substeps.max(1);
        let h = self.dt / n as f64;
        let mut s = vec![x[0], x[1], theta, v, x[5]];
        for _ in 0..n {
            s = ode_step(&field, &s, &tau, e, 0.0, SolverKind::Rk4, h)?;
        }
        let (sn, cs) = s[2].sin_cos();
        Ok(vec![s[0], s[1], s[2], s[3] * cs, s[3] * sn, s[4]])
    }
}

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::envs::wrap_angle;

/// Goal reaching for the ground robot: track a distance-proportional
/// speed and the pure-pursuit heading towards the goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalReach {
    pub w_v: f64,
    pub w_theta: f64,
    pub goal: [f64; 2],
    /// `v_ref = min(v_gain * distance, v_max)`.
    pub v_gain: f64,
    pub v_max: f64,
    /// Within a rollout, costs stop accruing once the goal is within this
    /// radius (0 = never). Avoids the pure-pursuit heading flipping as a
    /// rollout crosses the goal.
    pub goal_radius: f64,
}

impl Default for GoalReach {
    fn default() -> Self {
        Self { w_v: 1.0, w_theta: 0.5, goal: [0.0, 0.0], v_gain: 3.0, v_max: 0.4, goal_radius: 0.01 }
    }
}

/// Path tracking against a polyline with per-point headings and speeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathTrack {
    pub w_p: f64,
    pub w_v: f64,
    pub w_theta: f64,
    pub points: Vec<[f64; 2]>,
    pub headings: Vec<f64>,
    pub speeds: Vec<f64>,
    /// Reference points searched ahead of the current index.
    pub lookahead: usize,
}

impl Default for PathTrack {
    fn default() -> Self {
        Self { w_p: 10.0, w_v: 0.5, w_theta: 0.5, points: Vec::new(), headings: Vec::new(), speeds: Vec::new(), lookahead: 20 }
    }
}

/// Position and attitude tracking for the quadrotor; references are
/// indexed by control step and hold their last value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseTrack {
    pub w_p: f64,
    pub w_q: f64,
    pub positions: Vec<[f64; 3]>,
    pub quats: Vec<[f64; 4]>,
}

impl Default for PoseTrack {
    fn default() -> Self {
        Self { w_p: 10.0, w_q: 1.0, positions: vec![[0.0; 3]], quats: vec![[1.0, 0.0, 0.0, 0.0]] }
    }
}

/// `sum (x - x*)' Q (x - x*) + (u - u*)' R (u - u*)` plus a terminal
/// `(x_H - x*)' Q_f (x_H - x*)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub q_terminal: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub u_ref: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    GoalReach(GoalReach),
    PathTrack(PathTrack),
    Pose(PoseTrack),
    Quadratic(Quadratic),
}

/// Per-rollout memory of a cost (the path index for tracking, whether the
/// goal was reached).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostCursor {
    pub path_index: usize,
    pub reached: bool,
}

fn forward_speed(x: &[f64]) -> f64 {
    x[3] * x[2].cos() + x[4] * x[2].sin()
}

fn quad_form(m: &[Vec<f64>], d: &[f64]) -> f64 {
    m.iter()
        .zip(d)
        .map(|(row, di)| di * row.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

impl CostSpec {
    pub fn validate(&self, state_dim: usize, action_dim: usize) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::Invalid(m.to_string()));
        let neg = |ws: &[f64]| ws.iter().any(|w| !(*w >= 0.0));
        match self {
            CostSpec::GoalReach(c) => {
                if neg(&[c.w_v, c.w_theta, c.v_gain, c.v_max, c.goal_radius]) {
                    return bad("goal-reach weights must be non-negative");
                }
            }
            CostSpec::PathTrack(c) => {
                if neg(&[c.w_p, c.w_v, c.w_theta]) {
                    return bad("path weights must be non-negative");
                }
                if c.points.is_empty() {
                    return bad("empty reference path");
                }
                if c.headings.len() != c.points.len() || c.speeds.len() != c.points.len() {
                    return bad("path headings and speeds must match the points");
                }
            }
            CostSpec::Pose(c) => {
                if neg(&[c.w_p, c.w_q]) {
                    return bad("pose weights must be non-negative");
                }
                if c.positions.is_empty() || c.quats.is_empty() {
                    return bad("empty pose reference");
                }
            }
            CostSpec::Quadratic(c) => {
                let square = |m: &[Vec<f64>], n: usize| m.len() == n && m.iter().all(|r| r.len() == n);
                if !square(&c.q, state_dim)
                    || !square(&c.q_terminal, state_dim)
                    || !square(&c.r, action_dim)
                    || c.target.len() != state_dim
                    || c.u_ref.len() != action_dim
                {
                    return bad("quadratic cost dimensions do not match the platform");
                }
            }
        }
        Ok(())
    }

    /// Cost of arriving in `x` after applying `u` at absolute step `step`.
    pub fn stage(&self, x: &[f64], u: &[f64], step: usize, cursor: &mut CostCursor) -> f64 {
        match self {
            CostSpec::GoalReach(c) => {
                let (dx, dy) = (c.goal[0] - x[0], c.goal[1] - x[1]);
                let dist = dx.hypot(dy);
                if cursor.reached || dist < c.goal_radius {
                    cursor.reached = true;
                    return 0.0;
                }
                let v_ref = (c.v_gain * dist).min(c.v_max);
                let theta_pp = dy.atan2(dx);
                c.w_v * (forward_speed(x) - v_ref).powi(2) + c.w_theta * wrap_angle(x[2] - theta_pp).powi(2)
            }
            CostSpec::PathTrack(c) => {
                let d2 = |j: usize| (x[0] - c.points[j][0]).powi(2) + (x[1] - c.points[j][1]).powi(2);
                let start = cursor.path_index.min(c.points.len() - 1);
                let end = (start + c.lookahead.max(1)).min(c.points.len() - 1);
                let j = (start..=end)
                    .min_by(|a, b| d2(*a).total_cmp(&d2(*b)))
                    .unwrap_or(start);
                cursor.path_index = j;
                c.w_p * d2(j)
                    + c.w_v * (forward_speed(x) - c.speeds[j]).powi(2)
                    + c.w_theta * wrap_angle(x[2] - c.headings[j]).powi(2)
            }
            CostSpec::Pose(c) => {
                let p = c.positions[step.min(c.positions.len() - 1)];
                let q = c.quats[step.min(c.quats.len() - 1)];
                let ep: f64 = (0..3).map(|i| (x[i] - p[i]).powi(2)).sum();
                let dot: f64 = (0..4).map(|i| x[6 + i] * q[i]).sum();
                c.w_p * ep + c.w_q * (1.0 - dot * dot)
            }
            CostSpec::Quadratic(c) => {
                let dx: Vec<f64> = x.iter().zip(&c.target).map(|(a, b)| a - b).collect();
                let du: Vec<f64> = u.iter().zip(&c.u_ref).map(|(a, b)| a - b).collect();
                quad_form(&c.q, &dx) + quad_form(&c.r, &du)
            }
        }
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        match self {
            CostSpec::Quadratic(c) => {
                let dx: Vec<f64> = x.iter().zip(&c.target).map(|(a, b)| a - b).collect();
                quad_form(&c.q_terminal, &dx)
            }
            _ => 0.0,
        }
    }

    /// Cost of a predicted sequence: `states[t]` results from `actions[t]`
    /// applied at absolute step `start_step + t`.
    pub fn trajectory_cost(&self, states: &[Vec<f64>], actions: &[Vec<f64>], start_step: usize, cursor: CostCursor) -> f64 {
        let mut cur = cursor;
        let mut total = 0.0;
        for (t, (x, u)) in states.iter().zip(actions).enumerate() {
            total += self.stage(x, u, start_step + t, &mut cur);
        }
        if let Some(last) = states.last() {
            total += self.terminal(last);
        }
        total
    }
}

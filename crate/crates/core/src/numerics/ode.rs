//! Fixed-step explicit integrators.
//!
//! Two flavours share the same update rules: a plain-slice version used
//! by the simulators and planner rollouts, and a graph version that keeps
//! the unrolled steps differentiable for training.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    ForwardEuler,
    Rk4,
}

/// Integration scheme with a fixed, positive step size in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solver {
    pub kind: SolverKind,
    pub step_size: f64,
}

impl Solver {
    pub fn new(kind: SolverKind, step_size: f64) -> Result<Self, NumericsError> {
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(NumericsError::Contract(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        Ok(Self { kind, step_size })
    }

    pub fn euler(step_size: f64) -> Self {
        Self::new(SolverKind::ForwardEuler, step_size).expect("positive step size")
    }

    pub fn rk4(step_size: f64) -> Self {
        Self::new(SolverKind::Rk4, step_size).expect("positive step size")
    }
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(&xi, &ki)| xi + a * ki).collect()
}

fn checked<F>(field: &F, x: &[f64], u: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>, NumericsError>
where
    F: Fn(&[f64], &[f64], &[f64], f64) -> Vec<f64> + ?Sized,
{
    let d = field(x, u, z, t);
    if d.len() != x.len() {
        return Err(NumericsError::Shape(format!(
            "field returned {} values for a state of {}",
            d.len(),
            x.len()
        )));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite { step: 0 });
    }
    Ok(d)
}

/// Advances `x` by `dt` seconds under `field(x, u, z, t)`.
///
/// `dt == 0` returns `x` unchanged; negative steps are rejected.
pub fn ode_step<F>(
    field: &F,
    x: &[f64],
    u: &[f64],
    z: &[f64],
    t: f64,
    kind: SolverKind,
    dt: f64,
) -> Result<Vec<f64>, NumericsError>
where
    F: Fn(&[f64], &[f64], &[f64], f64) -> Vec<f64> + ?Sized,
{
    if dt < 0.0 || !dt.is_finite() {
        return Err(NumericsError::Contract(format!("invalid step {dt}")));
    }
    if dt == 0.0 {
        return Ok(x.to_vec());
    }
    let next = match kind {
        SolverKind::ForwardEuler => {
            let k1 = checked(field, x, u, z, t)?;
            axpy(x, dt, &k1)
        }
        SolverKind::Rk4 => {
            let k1 = checked(field, x, u, z, t)?;
            let k2 = checked(field, &axpy(x, 0.5 * dt, &k1), u, z, t + 0.5 * dt)?;
            let k3 = checked(field, &axpy(x, 0.5 * dt, &k2), u, z, t + 0.5 * dt)?;
            let k4 = checked(field, &axpy(x, dt, &k3), u, z, t + dt)?;
            x.iter()
                .enumerate()
                .map(|(i, &xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        }
    };
    if next.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite { step: 0 });
    }
    Ok(next)
}

/// Rolls `field` forward for `n_steps`, returning `n_steps + 1` states
/// starting with `x0`. Step `i` applies `controls[i]`.
pub fn integrate<F>(
    field: &F,
    x0: &[f64],
    controls: &[Vec<f64>],
    z: &[f64],
    dt: f64,
    n_steps: usize,
    kind: SolverKind,
) -> Result<Vec<Vec<f64>>, NumericsError>
where
    F: Fn(&[f64], &[f64], &[f64], f64) -> Vec<f64> + ?Sized,
{
    if controls.len() < n_steps {
        return Err(NumericsError::Contract(format!(
            "{} controls for {} steps",
            controls.len(),
            n_steps
        )));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0.to_vec());
    for (i, u) in controls.iter().take(n_steps).enumerate() {
        let x = states.last().unwrap();
        let next = ode_step(field, x, u, z, i as f64 * dt, kind, dt).map_err(|e| match e {
            NumericsError::NonFinite { .. } => NumericsError::NonFinite { step: i },
            other => other,
        })?;
        states.push(next);
    }
    Ok(states)
}

/// Differentiable step: the field builds its output on the same graph.
#[allow(clippy::too_many_arguments)]
pub fn ode_step_graph<F>(
    g: &mut Graph,
    field: &mut F,
    x: Var,
    u: Var,
    z: Var,
    t: f64,
    kind: SolverKind,
    dt: f64,
) -> Result<Var, NumericsError>
where
    F: FnMut(&mut Graph, Var, Var, Var, f64) -> Result<Var, NumericsError>,
{
    if dt < 0.0 {
        return Err(NumericsError::Contract(format!("invalid step {dt}")));
    }
    if dt == 0.0 {
        return Ok(x);
    }
    let mut eval = |g: &mut Graph, x: Var, t: f64| -> Result<Var, NumericsError> {
        let d = field(g, x, u, z, t)?;
        if g.value(d).shape() != g.value(x).shape() {
            return Err(NumericsError::Shape(format!(
                "field output {:?} vs state {:?}",
                g.value(d).shape(),
                g.value(x).shape()
            )));
        }
        if !g.value(d).is_valid() {
            return Err(NumericsError::NonFinite { step: 0 });
        }
        Ok(d)
    };
    match kind {
        SolverKind::ForwardEuler => {
            let k1 = eval(g, x, t)?;
            let s = g.scale(k1, dt);
            g.add(x, s)
        }
        SolverKind::Rk4 => {
            let k1 = eval(g, x, t)?;
            let h1 = g.scale(k1, 0.5 * dt);
            let x2 = g.add(x, h1)?;
            let k2 = eval(g, x2, t + 0.5 * dt)?;
            let h2 = g.scale(k2, 0.5 * dt);
            let x3 = g.add(x, h2)?;
            let k3 = eval(g, x3, t + 0.5 * dt)?;
            let h3 = g.scale(k3, dt);
            let x4 = g.add(x, h3)?;
            let k4 = eval(g, x4, t + dt)?;
            let k23 = g.add(k2, k3)?;
            let k23 = g.scale(k23, 2.0);
            let s = g.add(k1, k23)?;
            let s = g.add(s, k4)?;
            let s = g.scale(s, dt / 6.0);
            g.add(x, s)
        }
    }
}

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpSpec};
use super::normalize::Normalizer;
use super::ModelError;
use crate::numerics::{ode_step, ode_step_graph, Graph, NumericsError, SolverKind, Tensor, Var};
use crate::platform::Platform;
use crate::Rng;

/// How the network output is turned into the next state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    /// Output is `dx/dt`; next state comes from numerical integration.
    Node,
    /// Output is `x_next` directly (discrete-time map baseline).
    DiscreteMap,
}

/// Dynamics network over `concat(norm(x), norm(u), z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateNet {
    pub platform: Platform,
    pub kind: DynamicsKind,
    pub latent_dim: usize,
    mlp: Mlp,
    pub state_norm: Normalizer,
    pub action_norm: Normalizer,
    /// Maps network output to physical units (derivative or next state).
    pub output_norm: Normalizer,
}

impl StateNet {
    pub fn new(
        platform: Platform,
        kind: DynamicsKind,
        latent_dim: usize,
        hidden: Vec<usize>,
        rng: &mut Rng,
    ) -> Result<Self, ModelError> {
        let spec = Self::spec_for(platform, latent_dim, hidden);
        let mlp = Mlp::new(spec, rng)?;
        Ok(Self::with_mlp(platform, kind, latent_dim, mlp))
    }

    pub fn spec_for(platform: Platform, latent_dim: usize, hidden: Vec<usize>) -> MlpSpec {
        MlpSpec::new(
            platform.state_dim() + platform.action_dim() + latent_dim,
            hidden,
            platform.state_dim(),
        )
    }

    pub fn with_mlp(platform: Platform, kind: DynamicsKind, latent_dim: usize, mlp: Mlp) -> Self {
        let n = platform.state_dim();
        Self {
            platform,
            kind,
            latent_dim,
            mlp,
            state_norm: Normalizer::identity(n),
            action_norm: Normalizer::identity(platform.action_dim()),
            output_norm: Normalizer::identity(n),
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn params(&self) -> &[Tensor] {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.mlp.params_mut()
    }

    pub fn state_dim(&self) -> usize {
        self.platform.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.platform.action_dim()
    }

    fn check_dims(&self, x: usize, u: usize, z: usize) -> Result<(), ModelError> {
        let checks = [
            ("state", self.state_dim(), x),
            ("action", self.action_dim(), u),
            ("latent", self.latent_dim, z),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(ModelError::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Raw network evaluation in physical units for a batch of rows.
    /// `z` is either one latent vector shared by all rows or one per row.
    pub fn output_batch(&self, x: &[f64], u: &[f64], z: &[f64], rows: usize) -> Vec<f64> {
        let (n, m, l) = (self.state_dim(), self.action_dim(), self.latent_dim);
        let width = n + m + l;
        let shared_z = z.len() == l;
        let mut input = vec![0.0; rows * width];
        for r in 0..rows {
            let row = &mut input[r * width..(r + 1) * width];
            for j in 0..n {
                row[j] = (x[r * n + j] - self.state_norm.mean[j]) / self.state_norm.std[j];
            }
            for j in 0..m {
                row[n + j] = (u[r * m + j] - self.action_norm.mean[j]) / self.action_norm.std[j];
            }
            let zr = if shared_z { z } else { &z[r * l..(r + 1) * l] };
            row[n + m..].copy_from_slice(zr);
        }
        let mut out = self.mlp.forward_batch(&input, rows);
        self.output_norm.invert_in_place(&mut out);
        out
    }

    /// `dx/dt` at a single point. Only defined for [`DynamicsKind::Node`].
    pub fn state_derivative(&self, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>, ModelError> {
        if self.kind != DynamicsKind::Node {
            return Err(ModelError::Spec("discrete-map model has no derivative".into()));
        }
        self.check_dims(x.len(), u.len(), z.len())?;
        let d = self.output_batch(x, u, z, 1);
        if d.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(d)
    }

    /// One control step of the learned dynamics.
    pub fn predict_next(
        &self,
        x: &[f64],
        u: &[f64],
        z: &[f64],
        dt: f64,
        solver: SolverKind,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_dims(x.len(), u.len(), z.len())?;
        let mut next = match self.kind {
            DynamicsKind::Node => {
                let field = |x: &[f64], u: &[f64], z: &[f64], _t: f64| self.output_batch(x, u, z, 1);
                ode_step(&field, x, u, z, 0.0, solver, dt)?
            }
            DynamicsKind::DiscreteMap => {
                if dt == 0.0 {
                    x.to_vec()
                } else {
                    self.output_batch(x, u, z, 1)
                }
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        self.renormalize(&mut next, 1);
        Ok(next)
    }

    /// In-place batched step used by planner rollouts.
    pub fn step_batch(
        &self,
        states: &mut [f64],
        actions: &[f64],
        z: &[f64],
        rows: usize,
        dt: f64,
        solver: SolverKind,
    ) {
        match self.kind {
            DynamicsKind::Node => match solver {
                SolverKind::ForwardEuler => {
                    let d = self.output_batch(states, actions, z, rows);
                    states.iter_mut().zip(&d).for_each(|(s, di)| *s += dt * di);
                }
                SolverKind::Rk4 => {
                    let x0 = states.to_vec();
                    let shifted = |k: &[f64], h: f64| -> Vec<f64> {
                        x0.iter().zip(k).map(|(x, k)| x + h * k).collect()
                    };
                    let k1 = self.output_batch(&x0, actions, z, rows);
                    let k2 = self.output_batch(&shifted(&k1, 0.5 * dt), actions, z, rows);
                    let k3 = self.output_batch(&shifted(&k2, 0.5 * dt), actions, z, rows);
                    let k4 = self.output_batch(&shifted(&k3, dt), actions, z, rows);
                    for i in 0..states.len() {
                        states[i] = x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }
            },
            DynamicsKind::DiscreteMap => {
                let next = self.output_batch(states, actions, z, rows);
                states.copy_from_slice(&next);
            }
        }
        self.renormalize(states, rows);
    }

    fn renormalize(&self, states: &mut [f64], rows: usize) {
        if let Some(q0) = self.platform.quat_offset() {
            let n = self.state_dim();
            for r in 0..rows {
                let q = &mut states[r * n + q0..r * n + q0 + 4];
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    q.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
    }

    /// Differentiable network output in physical units.
    pub fn output_graph(
        &self,
        g: &mut Graph,
        x: Var,
        u: Var,
        z: Var,
        params: &[Var],
    ) -> Result<Var, ModelError> {
        let xn = self.state_norm.apply_graph(g, x)?;
        let un = self.action_norm.apply_graph(g, u)?;
        let input = g.concat(&[xn, un, z])?;
        let raw = self.mlp.forward_graph(g, input, params, None)?;
        Ok(self.output_norm.invert_graph(g, raw)?)
    }

    /// Differentiable control step; mirrors [`Self::step_batch`].
    #[allow(clippy::too_many_arguments)]
    pub fn step_graph(
        &self,
        g: &mut Graph,
        x: Var,
        u: Var,
        z: Var,
        params: &[Var],
        dt: f64,
        solver: SolverKind,
    ) -> Result<Var, ModelError> {
        let next = match self.kind {
            DynamicsKind::Node => {
                let mut field = |g: &mut Graph, x: Var, u: Var, z: Var, _t: f64| {
                    self.output_graph(g, x, u, z, params).map_err(|e| match e {
                        ModelError::Numerics(n) => n,
                        other => NumericsError::Contract(other.to_string()),
                    })
                };
                ode_step_graph(g, &mut field, x, u, z, 0.0, solver, dt)?
            }
            DynamicsKind::DiscreteMap => self.output_graph(g, x, u, z, params)?,
        };
        match self.platform.quat_offset() {
            Some(q0) => Ok(g.normalize_segment(next, q0, 4)?),
            None => Ok(next),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn net(kind: DynamicsKind) -> StateNet {
        let mut rng = Rng::seed_from_u64(11);
        StateNet::new(Platform::Msd, kind, 4, vec![16, 16], &mut rng).unwrap()
    }

    #[test]
    fn zero_params_zero_derivative() {
        let mut n = net(DynamicsKind::Node);
        n.params_mut().iter_mut().for_each(|p| p.values_mut().fill(0.0));
        let d = n.state_derivative(&[1.0, -2.0], &[0.5], &[0.1; 4]).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
        let x = n
            .predict_next(&[1.0, -2.0], &[0.5], &[0.1; 4], 0.05, SolverKind::ForwardEuler)
            .unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
    }

    #[test]
    fn zero_dt_keeps_state() {
        let n = net(DynamicsKind::Node);
        let x = n
            .predict_next(&[0.3, 0.4], &[1.0], &[0.0; 4], 0.0, SolverKind::Rk4)
            .unwrap();
        assert_eq!(x, vec![0.3, 0.4]);
    }

    #[test]
    fn repeated_evaluation_is_identical() {
        let n = net(DynamicsKind::Node);
        let a = n.state_derivative(&[0.3, 0.4], &[1.0], &[0.2; 4]).unwrap();
        let b = n.state_derivative(&[0.3, 0.4], &[1.0], &[0.2; 4]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let n = net(DynamicsKind::Node);
        assert!(matches!(
            n.state_derivative(&[0.3], &[1.0], &[0.2; 4]),
            Err(ModelError::Dimension { what: "state", .. })
        ));
    }

    #[test]
    fn batch_graph_and_single_paths_agree() {
        for kind in [DynamicsKind::Node, DynamicsKind::DiscreteMap] {
            let mut n = net(kind);
            n.state_norm = Normalizer {
                mean: vec![0.1, -0.2],
                std: vec![2.0, 0.5],
            };
            n.output_norm = Normalizer {
                mean: vec![0.0, 0.3],
                std: vec![1.5, 3.0],
            };
            let x = [0.2, -0.7, 1.1, 0.4];
            let u = [0.5, -1.0];
            let z = [0.1, 0.2, 0.3, 0.4];
            let mut batch = x.to_vec();
            n.step_batch(&mut batch, &u, &z, 2, 0.05, SolverKind::Rk4);
            let single = n
                .predict_next(&x[2..], &u[1..], &z, 0.05, SolverKind::Rk4)
                .unwrap();
            assert!((batch[2] - single[0]).abs() < 1e-12 && (batch[3] - single[1]).abs() < 1e-12);

            let mut g = Graph::new();
            let params: Vec<Var> = n.params().iter().map(|p| g.param(p.clone())).collect();
            let xv = g.constant(Tensor::matrix(2, 2, x.to_vec()).unwrap());
            let uv = g.constant(Tensor::matrix(2, 1, u.to_vec()).unwrap());
            let zv = g.constant(Tensor::matrix(2, 4, [z, z].concat()).unwrap());
            let y = n.step_graph(&mut g, xv, uv, zv, &params, 0.05, SolverKind::Rk4).unwrap();
            for (a, b) in g.value(y).values().iter().zip(&batch) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quaternion_block_is_renormalised() {
        let mut rng = Rng::seed_from_u64(2);
        let n = StateNet::new(Platform::Quad, DynamicsKind::Node, 8, vec![16], &mut rng).unwrap();
        let mut x = vec![0.0; 10];
        x[6] = 1.0;
        let next = n
            .predict_next(&x, &[9.8, 0.1, 0.0, 0.0], &[0.0; 8], 0.02, SolverKind::ForwardEuler)
            .unwrap();
        let norm: f64 = next[6..10].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

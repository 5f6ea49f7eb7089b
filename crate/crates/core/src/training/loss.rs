use super::TrainError;
use crate::data::Dataset;
use crate::models::{EnvEncoder, StateNet};
use crate::numerics::{Graph, SolverKind, Tensor, Var};

/// Ground-truth segments stacked step by step: `actions[i]`, `envs[i]` and
/// `targets[i]` are row-major `[rows, width]` blocks for step `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentBatch {
    pub rows: usize,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    pub envs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// All `(trajectory, start)` pairs with at least `horizon + 1` states,
/// starting no earlier than `min_start`.
pub fn valid_segments(ds: &Dataset, horizon: usize, min_start: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, t) in ds.trajectories.iter().enumerate() {
        if t.len() >= horizon {
            for k in min_start..=t.len() - horizon {
                out.push((i, k));
            }
        }
    }
    out
}

impl SegmentBatch {
    pub fn from_segments(ds: &Dataset, segs: &[(usize, usize)], horizon: usize) -> Result<Self, TrainError> {
        if horizon == 0 {
            return Err(TrainError::Contract("horizon must be at least 1".into()));
        }
        let rows = segs.len();
        let mut b = SegmentBatch {
            rows,
            horizon,
            x0: Vec::new(),
            actions: vec![Vec::new(); horizon],
            envs: vec![Vec::new(); horizon],
            targets: vec![Vec::new(); horizon],
        };
        for &(ti, k) in segs {
            let t = ds
                .trajectories
                .get(ti)
                .ok_or_else(|| TrainError::Contract(format!("no trajectory {ti}")))?;
            if k + horizon > t.len() {
                return Err(TrainError::Contract(format!(
                    "segment at {k} of horizon {horizon} exceeds trajectory of length {}",
                    t.len()
                )));
            }
            b.x0.extend_from_slice(&t.transitions[k].x);
            for i in 0..horizon {
                let tr = &t.transitions[k + i];
                b.actions[i].extend_from_slice(&tr.u);
                b.envs[i].extend_from_slice(&tr.e);
                b.targets[i].extend_from_slice(&tr.x_next);
            }
        }
        Ok(b)
    }
}

/// Rollout settings shared by the loss functions.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutSpec {
    pub dt: f64,
    pub solver: SolverKind,
    /// Per-dimension residual weights (`1 / std` gives normalised units).
    pub inv_scale: Vec<f64>,
}

impl RolloutSpec {
    pub fn normalized(net: &StateNet, dt: f64, solver: SolverKind) -> Self {
        Self {
            dt,
            solver,
            inv_scale: net.state_norm.std.iter().map(|s| 1.0 / s).collect(),
        }
    }
}

/// Differentiable multistep loss: open-loop rollout from `x0` with
/// `z_i = g(e_i)`, mean squared (weighted) error over steps, rows and
/// state dimensions.
pub fn multistep_loss_graph(
    g: &mut Graph,
    net: &StateNet,
    enc: &EnvEncoder,
    net_params: &[Var],
    enc_params: &[Var],
    batch: &SegmentBatch,
    spec: &RolloutSpec,
) -> Result<Var, TrainError> {
    let (n, m, p) = (net.state_dim(), net.action_dim(), net.platform.env_dim());
    let rows = batch.rows;
    let mut x = g.constant(Tensor::matrix(rows, n, batch.x0.clone())?);
    let w = g.constant(Tensor::vector(spec.inv_scale.clone()));
    let mut acc: Option<Var> = None;
    for i in 0..batch.horizon {
        let u = g.constant(Tensor::matrix(rows, m, batch.actions[i].clone())?);
        let e = g.constant(Tensor::matrix(rows, p, batch.envs[i].clone())?);
        let z = enc.forward_graph(g, e, enc_params)?;
        x = net.step_graph(g, x, u, z, net_params, spec.dt, spec.solver)?;
        let target = g.constant(Tensor::matrix(rows, n, batch.targets[i].clone())?);
        let diff = g.sub(x, target)?;
        let weighted = g.mul(diff, w)?;
        let sq = g.sum_sq(weighted);
        acc = Some(match acc {
            Some(a) => g.add(a, sq)?,
            None => sq,
        });
    }
    let total = acc.ok_or_else(|| TrainError::Contract("empty horizon".into()))?;
    Ok(g.scale(total, 1.0 / (batch.horizon * rows * n) as f64))
}

/// Loss value only, via the batched inference path.
pub fn loss_multistep(net: &StateNet, enc: &EnvEncoder, batch: &SegmentBatch, spec: &RolloutSpec) -> f64 {
    let n = net.state_dim();
    let mut x = batch.x0.clone();
    let mut total = 0.0;
    for i in 0..batch.horizon {
        let z = enc.encode_batch(&batch.envs[i], batch.rows);
        net.step_batch(&mut x, &batch.actions[i], &z, batch.rows, spec.dt, spec.solver);
        for (j, (a, b)) in x.iter().zip(&batch.targets[i]).enumerate() {
            let d = (a - b) * spec.inv_scale[j % n];
            total += d * d;
        }
    }
    total / (batch.horizon * batch.rows * n) as f64
}

/// Loss with gradients for the state net and the encoder parameters.
pub fn loss_and_grads(
    net: &StateNet,
    enc: &EnvEncoder,
    batch: &SegmentBatch,
    spec: &RolloutSpec,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>), TrainError> {
    let mut g = Graph::new();
    let np: Vec<Var> = net.params().iter().map(|t| g.param(t.clone())).collect();
    let ep: Vec<Var> = enc.params().iter().map(|t| g.param(t.clone())).collect();
    let loss = multistep_loss_graph(&mut g, net, enc, &np, &ep, batch, spec)?;
    let value = g.value(loss).item();
    g.backward(loss)?;
    let grads = |vars: &[Var]| -> Vec<Vec<f64>> {
        vars.iter()
            .map(|v| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_default())
            .collect()
    };
    Ok((value, grads(&np), grads(&ep)))
}

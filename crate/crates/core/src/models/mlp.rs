use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::{gemm, Graph, Tensor, Var};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Fully connected network: `hidden` layers with activation, linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(in_dim: usize, hidden: Vec<usize>, out_dim: usize) -> Self {
        Self {
            in_dim,
            hidden,
            out_dim,
            activation: Activation::Relu,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden.contains(&0) {
            return Err(ModelError::Spec(format!("zero width in {self:?}")));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_dim];
        w.extend(&self.hidden);
        w.push(self.out_dim);
        w
    }
}

/// Uniform fan-in initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn fan_in_uniform(rng: &mut Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Inverted-dropout mask for a `[rows, cols]` activation.
pub(crate) fn dropout_mask(rng: &mut Rng, rate: f64, rows: usize, cols: usize) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let values = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor::new(vec![rows, cols], values).expect("mask shape")
}

/// Multi-layer perceptron. Parameters are stored as
/// `[W0, b0, W1, b1, ...]` with `Wi` shaped `[fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Tensor>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self, ModelError> {
        spec.validate()?;
        let widths = spec.widths();
        let mut params = Vec::new();
        for w in widths.windows(2) {
            let (fi, fo) = (w[0], w[1]);
            params.push(Tensor::new(vec![fi, fo], fan_in_uniform(rng, fi, fi * fo))?);
            params.push(Tensor::vector(fan_in_uniform(rng, fi, fo)));
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let widths = spec.widths();
        let mut params = Vec::new();
        for w in widths.windows(2) {
            params.push(Tensor::zeros(&[w[0], w[1]]));
            params.push(Tensor::zeros(&[w[1]]));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Tensor>) -> Result<Self, ModelError> {
        let template = Self::zeros(spec.clone())?;
        check_param_shapes(&template.params, &params)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Zeroes the output layer so the network outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        let n = self.params.len();
        for p in &mut self.params[n - 2..] {
            p.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn num_layers(&self) -> usize {
        self.params.len() / 2
    }

    /// Differentiable forward pass. `params` are the graph handles of
    /// [`Self::params`], in order. Dropout (training only) is applied after
    /// every hidden activation when `dropout` is given.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        input: Var,
        params: &[Var],
        mut dropout: Option<(&mut Rng, f64)>,
    ) -> Result<Var, ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::Spec("parameter handle count mismatch".into()));
        }
        if g.value(input).cols() != self.spec.in_dim {
            return Err(ModelError::Dimension {
                what: "mlp input",
                expected: self.spec.in_dim,
                got: g.value(input).cols(),
            });
        }
        let layers = self.num_layers();
        let mut h = input;
        for l in 0..layers {
            h = g.matmul(h, params[2 * l])?;
            h = g.add(h, params[2 * l + 1])?;
            if l + 1 < layers {
                h = match self.spec.activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
                if let Some((rng, rate)) = dropout.as_mut() {
                    if *rate > 0.0 {
                        let t = g.value(h);
                        let mask = dropout_mask(rng, *rate, t.rows(), t.cols());
                        let m = g.constant(mask);
                        h = g.mul(h, m)?;
                    }
                }
            }
        }
        Ok(h)
    }

    /// Plain batched inference on a row-major `[rows, in_dim]` buffer.
    pub fn forward_batch(&self, input: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), rows * self.spec.in_dim);
        let layers = self.num_layers();
        let mut h = input.to_vec();
        let mut width = self.spec.in_dim;
        for l in 0..layers {
            let w = &self.params[2 * l];
            let b = self.params[2 * l + 1].values();
            let out = w.shape()[1];
            let mut next = Vec::with_capacity(rows * out);
            for _ in 0..rows {
                next.extend_from_slice(b);
            }
            gemm(rows, width, out, 1.0, &h, false, w.values(), false, 1.0, &mut next);
            if l + 1 < layers {
                match self.spec.activation {
                    Activation::Relu => next.iter_mut().for_each(|v| *v = v.max(0.0)),
                    Activation::Tanh => next.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            h = next;
            width = out;
        }
        h
    }
}

pub(crate) fn check_param_shapes(expected: &[Tensor], got: &[Tensor]) -> Result<(), ModelError> {
    if expected.len() != got.len() {
        return Err(ModelError::Spec(format!(
            "expected {} parameter blocks, got {}",
            expected.len(),
            got.len()
        )));
    }
    for (e, g) in expected.iter().zip(got) {
        if e.shape() != g.shape() {
            return Err(ModelError::Spec(format!(
                "parameter shape {:?} does not match spec {:?}",
                g.shape(),
                e.shape()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn graph_and_batch_forward_agree() {
        let mut rng = Rng::seed_from_u64(3);
        let mlp = Mlp::new(MlpSpec::new(3, vec![5, 4], 2), &mut rng).unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let fast = mlp.forward_batch(&x, 4);
        let mut g = Graph::new();
        let params: Vec<Var> = mlp.params().iter().map(|p| g.param(p.clone())).collect();
        let input = g.constant(Tensor::matrix(4, 3, x).unwrap());
        let out = mlp.forward_graph(&mut g, input, &params, None).unwrap();
        for (a, b) in g.value(out).values().iter().zip(&fast) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tanh_paths_agree() {
        let mut rng = Rng::seed_from_u64(3);
        let spec = MlpSpec::new(2, vec![4], 1).with_activation(Activation::Tanh);
        let mlp = Mlp::new(spec, &mut rng).unwrap();
        let mut g = Graph::new();
        let params: Vec<Var> = mlp.params().iter().map(|p| g.constant(p.clone())).collect();
        let input = g.constant(Tensor::matrix(1, 2, vec![0.3, -0.8]).unwrap());
        let out = mlp.forward_graph(&mut g, input, &params, None).unwrap();
        assert!((g.value(out).values()[0] - mlp.forward_batch(&[0.3, -0.8], 1)[0]).abs() < 1e-14);
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut rng = Rng::seed_from_u64(1);
        let mut mlp = Mlp::new(MlpSpec::new(2, vec![8], 3), &mut rng).unwrap();
        mlp.zero_output_layer();
        assert!(mlp.forward_batch(&[0.3, -2.0], 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_width_rejected() {
        assert!(MlpSpec::new(2, vec![0], 1).validate().is_err());
    }
}

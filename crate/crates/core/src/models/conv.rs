use serde::{Deserialize, Serialize};

use super::mlp::{check_param_shapes, dropout_mask, fan_in_uniform, Mlp, MlpSpec};
use super::ModelError;
use crate::numerics::{ConvGeom, Graph, Tensor, Var};
use crate::Rng;

/// Stacked valid 1-D convolutions (ReLU + dropout after each), flattened
/// into an MLP head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv1dSpec {
    pub in_channels: usize,
    pub seq_len: usize,
    pub channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub dropout_rate: f64,
    /// Hidden widths of the head; its input is the flattened feature map.
    pub head_hidden: Vec<usize>,
    pub out_dim: usize,
}

impl Conv1dSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels.len() != self.kernel_sizes.len() || self.channels.is_empty() {
            return Err(ModelError::Spec(
                "one kernel size per convolution layer is required".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Spec(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.in_channels == 0 || self.channels.contains(&0) || self.out_dim == 0 {
            return Err(ModelError::Spec("zero channel count".into()));
        }
        let shrink: usize = self.kernel_sizes.iter().map(|k| k.saturating_sub(1)).sum();
        if self.kernel_sizes.contains(&0) || shrink >= self.seq_len {
            return Err(ModelError::Spec(format!(
                "sequence of {} steps too short for kernels {:?}",
                self.seq_len, self.kernel_sizes
            )));
        }
        Ok(())
    }

    fn geoms(&self) -> Vec<ConvGeom> {
        let mut geoms = Vec::new();
        let mut c = self.in_channels;
        let mut t = self.seq_len;
        for (&co, &k) in self.channels.iter().zip(&self.kernel_sizes) {
            let g = ConvGeom {
                in_channels: c,
                out_channels: co,
                in_len: t,
                kernel: k,
            };
            t = g.out_len();
            c = co;
            geoms.push(g);
        }
        geoms
    }

    pub fn flat_features(&self) -> usize {
        let g = *self.geoms().last().unwrap();
        g.out_channels * g.out_len()
    }

    pub fn head_spec(&self) -> MlpSpec {
        MlpSpec::new(self.flat_features(), self.head_hidden.clone(), self.out_dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    spec: Conv1dSpec,
    /// `[W0, b0, W1, b1, ...]`, `Wi` shaped `[out_channels, in_channels * kernel]`.
    conv_params: Vec<Tensor>,
    head: Mlp,
}

impl ConvNet {
    pub fn new(spec: Conv1dSpec, rng: &mut Rng) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut conv_params = Vec::new();
        for g in spec.geoms() {
            let fan_in = g.in_channels * g.kernel;
            conv_params.push(Tensor::new(
                vec![g.out_channels, fan_in],
                fan_in_uniform(rng, fan_in, g.out_channels * fan_in),
            )?);
            conv_params.push(Tensor::vector(fan_in_uniform(rng, fan_in, g.out_channels)));
        }
        let head = Mlp::new(spec.head_spec(), rng)?;
        Ok(Self {
            spec,
            conv_params,
            head,
        })
    }

    pub fn from_params(spec: Conv1dSpec, params: Vec<Tensor>) -> Result<Self, ModelError> {
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(spec, &mut rng)?;
        check_param_shapes(&net.params(), &params)?;
        let n_conv = net.conv_params.len();
        let mut params = params;
        let head_params = params.split_off(n_conv);
        net.conv_params = params;
        net.head = Mlp::from_params(net.spec.head_spec(), head_params)?;
        Ok(net)
    }

    pub fn spec(&self) -> &Conv1dSpec {
        &self.spec
    }

    pub fn head_mut(&mut self) -> &mut Mlp {
        &mut self.head
    }

    /// All parameters: convolution blocks followed by the head.
    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.conv_params.clone();
        p.extend(self.head.params().iter().cloned());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p: Vec<&mut Tensor> = self.conv_params.iter_mut().collect();
        p.extend(self.head.params_mut().iter_mut());
        p
    }

    /// `input` is `[batch, in_channels * seq_len]`, channel-major.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        input: Var,
        params: &[Var],
        mut dropout: Option<(&mut Rng, f64)>,
    ) -> Result<Var, ModelError> {
        let n_conv = self.conv_params.len();
        if params.len() != n_conv + self.head.params().len() {
            return Err(ModelError::Spec("parameter handle count mismatch".into()));
        }
        let mut h = input;
        for (l, geom) in self.spec.geoms().into_iter().enumerate() {
            h = g.conv1d(h, params[2 * l], params[2 * l + 1], geom)?;
            h = g.relu(h);
            if let Some((rng, rate)) = dropout.as_mut() {
                if *rate > 0.0 {
                    let t = g.value(h);
                    let mask = dropout_mask(rng, *rate, t.rows(), t.cols());
                    let m = g.constant(mask);
                    h = g.mul(h, m)?;
                }
            }
        }
        let head_dropout = dropout.map(|(rng, rate)| (rng, rate));
        self.head
            .forward_graph(g, h, &params[n_conv..], head_dropout)
    }

    /// Inference (dropout disabled).
    pub fn forward_batch(&self, input: &[f64], rows: usize) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.params().into_iter().map(|p| g.constant(p)).collect();
        let x = g.constant(Tensor::new(
            vec![rows, self.spec.in_channels * self.spec.seq_len],
            input.to_vec(),
        )?);
        let out = self.forward_graph(&mut g, x, &params, None)?;
        Ok(g.value(out).values().to_vec())
    }
}

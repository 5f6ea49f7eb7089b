use serde::{Deserialize, Serialize};

use super::conv::{Conv1dSpec, ConvNet};
use super::mlp::{Mlp, MlpSpec};
use super::normalize::Normalizer;
use super::ModelError;
use crate::data::HistoryWindow;
use crate::numerics::{Graph, Tensor, Var};
use crate::platform::Platform;
use crate::Rng;

/// `z = g(e)`: maps privileged environment factors to the latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvEncoder {
    pub platform: Platform,
    mlp: Mlp,
    pub env_norm: Normalizer,
}

impl EnvEncoder {
    pub fn new(
        platform: Platform,
        latent_dim: usize,
        hidden: Vec<usize>,
        rng: &mut Rng,
    ) -> Result<Self, ModelError> {
        let mlp = Mlp::new(MlpSpec::new(platform.env_dim(), hidden, latent_dim), rng)?;
        Ok(Self::with_mlp(platform, mlp))
    }

    pub fn with_mlp(platform: Platform, mlp: Mlp) -> Self {
        Self {
            platform,
            mlp,
            env_norm: Normalizer::identity(platform.env_dim()),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.spec().out_dim
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

    pub fn encode(&self, e: &[f64]) -> Result<Vec<f64>, ModelError> {
        if e.len() != self.platform.env_dim() {
            return Err(ModelError::Dimension {
                what: "environment factors",
                expected: self.platform.env_dim(),
                got: e.len(),
            });
        }
        Ok(self.encode_batch(e, 1))
    }

    pub fn encode_batch(&self, e: &[f64], rows: usize) -> Vec<f64> {
        self.mlp.forward_batch(&self.env_norm.apply(e), rows)
    }

    pub fn forward_graph(&self, g: &mut Graph, e: Var, params: &[Var]) -> Result<Var, ModelError> {
        let en = self.env_norm.apply_graph(g, e)?;
        self.mlp.forward_graph(g, en, params, None)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveSpec {
    Mlp(MlpSpec),
    Cnn(Conv1dSpec),
}

#[derive(Clone, Debug, PartialEq)]
enum Backend {
    Mlp(Mlp),
    Cnn(ConvNet),
}

/// `z~ = h(history)`: reconstructs the latent vector from the last `M`
/// state-action pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveModule {
    pub platform: Platform,
    pub history_len: usize,
    pub latent_dim: usize,
    backend: Backend,
    pub state_norm: Normalizer,
    pub action_norm: Normalizer,
}

impl AdaptiveModule {
    pub fn new(
        platform: Platform,
        history_len: usize,
        latent_dim: usize,
        spec: AdaptiveSpec,
        rng: &mut Rng,
    ) -> Result<Self, ModelError> {
        let backend = match spec {
            AdaptiveSpec::Mlp(s) => Backend::Mlp(Mlp::new(s, rng)?),
            AdaptiveSpec::Cnn(s) => Backend::Cnn(ConvNet::new(s, rng)?),
        };
        Self::assemble(platform, history_len, latent_dim, backend)
    }

    /// Dense backend over the flattened window.
    pub fn mlp_spec(platform: Platform, history_len: usize, latent_dim: usize, hidden: Vec<usize>) -> AdaptiveSpec {
        let width = history_len * (platform.state_dim() + platform.action_dim());
        AdaptiveSpec::Mlp(MlpSpec::new(width, hidden, latent_dim))
    }

    /// Convolutional backend with state and action components as channels.
    pub fn cnn_spec(
        platform: Platform,
        history_len: usize,
        latent_dim: usize,
        channels: Vec<usize>,
        kernel_sizes: Vec<usize>,
        dropout_rate: f64,
        head_hidden: Vec<usize>,
    ) -> AdaptiveSpec {
        AdaptiveSpec::Cnn(Conv1dSpec {
            in_channels: platform.state_dim() + platform.action_dim(),
            seq_len: history_len,
            channels,
            kernel_sizes,
            dropout_rate,
            head_hidden,
            out_dim: latent_dim,
        })
    }

    pub fn from_params(
        platform: Platform,
        history_len: usize,
        latent_dim: usize,
        spec: AdaptiveSpec,
        params: Vec<Tensor>,
    ) -> Result<Self, ModelError> {
        let backend = match spec {
            AdaptiveSpec::Mlp(s) => Backend::Mlp(Mlp::from_params(s, params)?),
            AdaptiveSpec::Cnn(s) => Backend::Cnn(ConvNet::from_params(s, params)?),
        };
        Self::assemble(platform, history_len, latent_dim, backend)
    }

    fn assemble(
        platform: Platform,
        history_len: usize,
        latent_dim: usize,
        backend: Backend,
    ) -> Result<Self, ModelError> {
        let pair = platform.state_dim() + platform.action_dim();
        let (in_ok, out) = match &backend {
            Backend::Mlp(m) => (m.spec().in_dim == history_len * pair, m.spec().out_dim),
            Backend::Cnn(c) => (
                c.spec().in_channels == pair && c.spec().seq_len == history_len,
                c.spec().out_dim,
            ),
        };
        if history_len == 0 || !in_ok {
            return Err(ModelError::Spec(format!(
                "adaptive module input does not match a window of {history_len} pairs"
            )));
        }
        if out != latent_dim {
            return Err(ModelError::Dimension {
                what: "adaptive module output",
                expected: latent_dim,
                got: out,
            });
        }
        Ok(Self {
            platform,
            history_len,
            latent_dim,
            backend,
            state_norm: Normalizer::identity(platform.state_dim()),
            action_norm: Normalizer::identity(platform.action_dim()),
        })
    }

    pub fn spec(&self) -> AdaptiveSpec {
        match &self.backend {
            Backend::Mlp(m) => AdaptiveSpec::Mlp(m.spec().clone()),
            Backend::Cnn(c) => AdaptiveSpec::Cnn(c.spec().clone()),
        }
    }

    pub fn dropout_rate(&self) -> f64 {
        match &self.backend {
            Backend::Mlp(_) => 0.0,
            Backend::Cnn(c) => c.spec().dropout_rate,
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        match &self.backend {
            Backend::Mlp(m) => m.params().to_vec(),
            Backend::Cnn(c) => c.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.backend {
            Backend::Mlp(m) => m.params_mut().iter_mut().collect(),
            Backend::Cnn(c) => c.params_mut(),
        }
    }

    pub fn zero_output_layer(&mut self) {
        match &mut self.backend {
            Backend::Mlp(m) => m.zero_output_layer(),
            Backend::Cnn(c) => c.head_mut().zero_output_layer(),
        }
    }

    fn pair_width(&self) -> usize {
        self.platform.state_dim() + self.platform.action_dim()
    }

    /// Width of one flattened window, `M * (state_dim + action_dim)`.
    pub fn input_width(&self) -> usize {
        self.history_len * self.pair_width()
    }

    /// Normalises flattened windows (`[x0, u0, x1, u1, ...]`, oldest first)
    /// and lays them out for the backend. Planar headings are shifted by a
    /// whole number of turns so the newest heading lies in `(-pi, pi]`.
    pub fn prepare(&self, flat: &[f64], rows: usize) -> Vec<f64> {
        let (n, m) = (self.platform.state_dim(), self.platform.action_dim());
        let p = n + m;
        let mm = self.history_len;
        let w = self.input_width();
        let mut out = vec![0.0; rows * w];
        for r in 0..rows {
            let src = &flat[r * w..(r + 1) * w];
            let shift = self.platform.heading_index().map(|h| {
                let newest = src[(mm - 1) * p + h];
                crate::envs::wrap_angle(newest) - newest
            });
            for t in 0..mm {
                for j in 0..p {
                    let mut v = src[t * p + j];
                    let normed = if j < n {
                        if let (Some(h), Some(s)) = (self.platform.heading_index(), shift) {
                            if j == h {
                                v += s;
                            }
                        }
                        (v - self.state_norm.mean[j]) / self.state_norm.std[j]
                    } else {
                        (v - self.action_norm.mean[j - n]) / self.action_norm.std[j - n]
                    };
                    let idx = match self.backend {
                        Backend::Mlp(_) => t * p + j,
                        Backend::Cnn(_) => j * mm + t,
                    };
                    out[r * w + idx] = normed;
                }
            }
        }
        out
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph,
        prepared: Var,
        params: &[Var],
        dropout: Option<&mut Rng>,
    ) -> Result<Var, ModelError> {
        let rate = self.dropout_rate();
        match &self.backend {
            Backend::Mlp(mlp) => mlp.forward_graph(g, prepared, params, None),
            Backend::Cnn(c) => c.forward_graph(g, prepared, params, dropout.map(|r| (r, rate))),
        }
    }

    /// Batched inference on flattened raw windows.
    pub fn encode_flat_batch(&self, flat: &[f64], rows: usize) -> Result<Vec<f64>, ModelError> {
        if flat.len() != rows * self.input_width() {
            return Err(ModelError::Dimension {
                what: "history window",
                expected: rows * self.input_width(),
                got: flat.len(),
            });
        }
        let x = self.prepare(flat, rows);
        match &self.backend {
            Backend::Mlp(m) => Ok(m.forward_batch(&x, rows)),
            Backend::Cnn(c) => c.forward_batch(&x, rows),
        }
    }

    pub fn encode(&self, window: &HistoryWindow) -> Result<Vec<f64>, ModelError> {
        if window.len() != self.history_len {
            return Err(ModelError::WindowLength {
                expected: self.history_len,
                got: window.len(),
            });
        }
        self.encode_flat_batch(&window.flat(), 1)
    }
}

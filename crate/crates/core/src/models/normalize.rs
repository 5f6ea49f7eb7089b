use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, NumericsError, Tensor, Var};

/// Per-feature affine normalisation `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const MIN_STD: f64 = 1e-6;

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and standard deviation over rows of width `dim`.
    /// Near-constant features keep unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for j in 0..dim {
                sum[j] += r[j];
                sq[j] += r[j] * r[j];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / nf - m * m).max(0.0);
                let sd = var.sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % self.dim()]) / self.std[i % self.dim()])
            .collect()
    }

    pub fn invert_in_place(&self, y: &mut [f64]) {
        let d = self.dim();
        for (i, v) in y.iter_mut().enumerate() {
            *v = *v * self.std[i % d] + self.mean[i % d];
        }
    }

    pub fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var, NumericsError> {
        let neg_mean = g.constant(Tensor::vector(self.mean.iter().map(|m| -m).collect()));
        let inv_std = g.constant(Tensor::vector(self.std.iter().map(|s| 1.0 / s).collect()));
        let c = g.add(x, neg_mean)?;
        g.mul(c, inv_std)
    }

    pub fn invert_graph(&self, g: &mut Graph, y: Var) -> Result<Var, NumericsError> {
        let std = g.constant(Tensor::vector(self.std.clone()));
        let mean = g.constant(Tensor::vector(self.mean.clone()));
        let s = g.mul(y, std)?;
        g.add(s, mean)
    }
}

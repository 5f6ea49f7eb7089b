use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

/// Adaptive-moment gradient descent with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::len).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Applies one update. `grads[i]` belongs to `params[i]`.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Vec<f64>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in params.into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for (j, w) in p.values_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Exponential interpolation from `start` to `end` over `total` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpSchedule {
    pub start: f64,
    pub end: f64,
}

impl ExpSchedule {
    pub fn at(&self, epoch: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.start;
        }
        let frac = epoch.min(total - 1) as f64 / (total - 1) as f64;
        self.start * (self.end / self.start).powf(frac)
    }
}

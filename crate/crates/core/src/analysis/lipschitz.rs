use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::Rng;

/// Sampled Lipschitz constant; a lower bound on the true constant over
/// the sampled domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub l: f64,
    pub n_pairs: usize,
    /// Pairs skipped because both points coincided.
    pub skipped: usize,
    pub domain: String,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Max of `|f(a) - f(b)| / |a - b|` over `n_pairs` pairs drawn from
/// `sample`. Pairs are drawn sequentially, so a longer run extends a
/// shorter one with the same seed and the estimate never decreases.
pub fn estimate_lipschitz(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    sample: &mut dyn FnMut(&mut Rng) -> Vec<f64>,
    n_pairs: usize,
    domain: &str,
    rng: &mut Rng,
) -> Result<LipschitzEstimate, AnalysisError> {
    if n_pairs == 0 {
        return Err(AnalysisError::Invalid("need at least one pair".into()));
    }
    let mut est = LipschitzEstimate { l: 0.0, n_pairs, skipped: 0, domain: domain.to_string() };
    for _ in 0..n_pairs {
        let a = sample(rng);
        let b = sample(rng);
        let d = dist(&a, &b);
        if d == 0.0 {
            est.skipped += 1;
            continue;
        }
        let ratio = dist(&f(&a), &f(&b)) / d;
        if ratio.is_finite() {
            est.l = est.l.max(ratio);
        }
    }
    Ok(est)
}

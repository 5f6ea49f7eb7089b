use serde::{Deserialize, Serialize};

use super::AnalysisError;

fn non_negative(args: &[(&str, f64)]) -> Result<(), AnalysisError> {
    for (name, v) in args {
        if !(*v >= 0.0) {
            return Err(AnalysisError::Invalid(format!("{name} must be non-negative, got {v}")));
        }
    }
    Ok(())
}

/// Trajectory divergence bound for a vector-field model with one-step
/// error `eps` and Lipschitz constant `l`: `(eps/L)(e^{Lt} - 1)`.
pub fn continuous_bound(eps: f64, l: f64, t: f64) -> Result<f64, AnalysisError> {
    non_negative(&[("eps", eps), ("L", l), ("t", t)])?;
    if l < 1e-12 {
        return Ok(eps * t);
    }
    Ok(eps / l * (l * t).exp_m1())
}

/// Discrete-map counterpart: `eps * sum_{i<H} L^i`.
pub fn discrete_bound(eps: f64, l: f64, h: usize) -> Result<f64, AnalysisError> {
    non_negative(&[("eps", eps), ("L", l)])?;
    if (l - 1.0).abs() < 1e-12 {
        return Ok(eps * h as f64);
    }
    Ok(eps * geometric(l, h))
}

/// `sum_{j<n} x^j`, evaluated as a sum (exact at `x = 1`).
fn geometric(x: f64, n: usize) -> f64 {
    let mut s = 0.0;
    let mut p = 1.0;
    for _ in 0..n {
        s += p;
        p *= x;
    }
    s
}

/// Horizon cost-sensitivity constant
/// `L_l * sum_{i<N} sum_{j<i} L_x^j + L_lf * sum_{j<N} L_x^j`.
pub fn gamma_n(l_ell: f64, l_lf: f64, l_x: f64, n: usize) -> Result<f64, AnalysisError> {
    non_negative(&[("L_ell", l_ell), ("L_lf", l_lf), ("L_x", l_x)])?;
    if n == 0 {
        return Err(AnalysisError::Invalid("horizon N must be at least 1".into()));
    }
    let inner: f64 = (0..n).map(|i| geometric(l_x, i)).sum();
    Ok(l_ell * inner + l_lf * geometric(l_x, n))
}

/// One-step model error split into adaptive-module and state-net parts.
pub fn eps_f(l_z: f64, eps_z: f64, eps_s: f64) -> Result<f64, AnalysisError> {
    non_negative(&[("L_z", l_z), ("eps_z", eps_z), ("eps_s", eps_s)])?;
    Ok(l_z * eps_z + eps_s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceParams {
    pub l_ell: f64,
    pub l_lf: f64,
    pub l_x: f64,
    pub l_z: f64,
    pub eps_z: f64,
    pub eps_s: f64,
    pub horizon: usize,
    /// Coefficient of the quadratic class-K lower bound `alpha(r) = a1 r^2`.
    pub alpha1: f64,
}

/// Ultimate bound radius `sqrt(2 Gamma_N eps_f / alpha1)`.
pub fn uub_radius(p: &ConvergenceParams) -> Result<f64, AnalysisError> {
    if !(p.alpha1 > 0.0) {
        return Err(AnalysisError::Invalid(format!("alpha1 must be positive, got {}", p.alpha1)));
    }
    let g = gamma_n(p.l_ell, p.l_lf, p.l_x, p.horizon)?;
    let e = eps_f(p.l_z, p.eps_z, p.eps_s)?;
    Ok((2.0 * g * e / p.alpha1).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn continuous_cases() {
        assert_eq!(continuous_bound(0.0, 3.0, 5.0).unwrap(), 0.0);
        assert!((continuous_bound(0.1, 0.0, 2.0).unwrap() - 0.2).abs() < 1e-15);
        let expect = 0.1 * (std::f64::consts::E - 1.0);
        assert!((continuous_bound(0.1, 1.0, 1.0).unwrap() - expect).abs() < 1e-15);
        assert!(continuous_bound(-0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn discrete_cases() {
        assert_eq!(discrete_bound(0.3, 2.0, 0).unwrap(), 0.0);
        assert!((discrete_bound(0.1, 1.0, 10).unwrap() - 1.0).abs() < 1e-15);
        let direct: f64 = (0..5).map(|i| 0.1 * 1.2f64.powi(i)).sum();
        assert!((discrete_bound(0.1, 1.2, 5).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn gamma_cases() {
        assert_eq!(gamma_n(2.0, 0.7, 3.0, 1).unwrap(), 0.7);
        assert_eq!(gamma_n(1.5, 0.5, 0.0, 4).unwrap(), 1.5 * 3.0 + 0.5);
        assert_eq!(gamma_n(1.0, 1.0, 1.0, 3).unwrap(), 6.0);
        assert!(gamma_n(1.0, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn eps_and_radius() {
        assert_eq!(eps_f(0.0, 9.0, 0.3).unwrap(), 0.3);
        assert_eq!(eps_f(4.0, 0.0, 0.0).unwrap(), 0.0);
        assert!((eps_f(2.0, 0.1, 0.05).unwrap() - 0.25).abs() < 1e-15);
        // Gamma_N = 6 (L_x = 1, N = 3), eps_f = 0.25, alpha1 = 3 -> r = 1.
        let p = ConvergenceParams { l_ell: 1.0, l_lf: 1.0, l_x: 1.0, l_z: 2.0, eps_z: 0.1, eps_s: 0.05, horizon: 3, alpha1: 3.0 };
        assert!((uub_radius(&p).unwrap() - 1.0).abs() < 1e-12);
        assert!(uub_radius(&ConvergenceParams { alpha1: 0.0, ..p.clone() }).is_err());
        assert_eq!(uub_radius(&ConvergenceParams { l_z: 0.0, eps_s: 0.0, ..p }).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn discrete_matches_sum(eps in 0.0..2.0f64, l in 0.0..1.5f64, h in 0usize..64) {
            let direct: f64 = (0..h).map(|i| eps * l.powi(i as i32)).sum();
            let b = discrete_bound(eps, l, h).unwrap();
            prop_assert!((b - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }

        #[test]
        fn bounds_are_monotone(eps in 0.0..1.0f64, l in 0.0..3.0f64, t in 0.0..3.0f64, d in 0.0..0.5f64) {
            let b = continuous_bound(eps, l, t).unwrap();
            prop_assert!(continuous_bound(eps + d, l, t).unwrap() >= b);
            prop_assert!(continuous_bound(eps, l + d, t).unwrap() >= b * (1.0 - 1e-12));
            prop_assert!(continuous_bound(eps, l, t + d).unwrap() >= b);
            let h = (t * 10.0) as usize;
            let db = discrete_bound(eps, l, h).unwrap();
            prop_assert!(discrete_bound(eps, l + d, h).unwrap() >= db * (1.0 - 1e-12));
            prop_assert!(discrete_bound(eps, l, h + 1).unwrap() >= db);
        }

        #[test]
        fn radius_scales_as_sqrt(e in 1e-4..1.0f64, g in 0.1..5.0f64, a in 0.1..5.0f64) {
            let p = ConvergenceParams { l_ell: g, l_lf: 0.0, l_x: 0.5, l_z: 0.0, eps_z: 0.0, eps_s: e, horizon: 4, alpha1: a };
            let r1 = uub_radius(&p).unwrap();
            let r4 = uub_radius(&ConvergenceParams { eps_s: 4.0 * e, ..p }).unwrap();
            prop_assert!((r4 - 2.0 * r1).abs() <= 1e-12 * r4.max(1.0));
        }
    }
}

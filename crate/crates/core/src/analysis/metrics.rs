use super::AnalysisError;
use crate::numerics::quat;

pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub fn success_rate(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
}

/// Minimal rotation angle between two attitudes, `2 acos |w(q_gt ⊗ q_pred^-1)|`.
pub fn quat_angle_error(q_gt: &[f64], q_pred: &[f64]) -> Result<f64, AnalysisError> {
    for q in [q_gt, q_pred] {
        let n = quat::norm(q);
        if q.len() != 4 || (n - 1.0).abs() > 1e-6 {
            return Err(AnalysisError::NonUnit(n));
        }
    }
    let e = quat::mul(q_gt, &quat::conj(q_pred));
    // 2 acos|w|, in the atan2 form: acos loses half the digits near 1.
    let v = (e[1] * e[1] + e[2] * e[2] + e[3] * e[3]).sqrt();
    Ok(2.0 * v.atan2(e[0].abs()))
}

/// Coefficient of determination of `pred` against `target`, rows of width
/// `dim`, with the total sum of squares taken about each column's mean.
pub fn r_squared(pred: &[f64], target: &[f64], dim: usize) -> f64 {
    let rows = target.len() / dim.max(1);
    if rows == 0 {
        return f64::NAN;
    }
    let mut mean = vec![0.0; dim];
    for r in 0..rows {
        for j in 0..dim {
            mean[j] += target[r * dim + j] / rows as f64;
        }
    }
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        ss_res += (p - t).powi(2);
        ss_tot += (t - mean[i % dim]).powi(2);
    }
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quaternion_identities() {
        let q = quat::from_axis_angle([0.3, -0.2, 0.9], 1.1);
        let neg: Vec<f64> = q.iter().map(|v| -v).collect();
        assert!(quat_angle_error(&q, &q).unwrap().abs() < 1e-9);
        assert!(quat_angle_error(&q, &neg).unwrap().abs() < 1e-9);
        let rz = quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        assert!((quat_angle_error(&quat::IDENTITY, &rz).unwrap() - FRAC_PI_2).abs() < 1e-9);
        assert!(quat_angle_error(&[1.0, 1.0, 0.0, 0.0], &quat::IDENTITY).is_err());
    }

    #[test]
    fn r_squared_cases() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(r_squared(&t, &t, 1), 1.0);
        assert!(r_squared(&[2.5; 4], &t, 1).abs() < 1e-12);
        assert_eq!(rmse(&[3.0, 4.0]), (12.5f64).sqrt());
        assert_eq!(success_rate(&[true, false, true, true]), 0.75);
    }

    fn unit() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0..1.0f64).prop_filter("non-degenerate", |q| quat::norm(q) > 0.1).prop_map(|mut q| {
            quat::normalize(&mut q);
            q
        })
    }

    proptest! {
        #[test]
        fn angle_is_symmetric_and_sign_invariant(a in unit(), b in unit()) {
            let e = quat_angle_error(&a, &b).unwrap();
            prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&e));
            prop_assert!((quat_angle_error(&b, &a).unwrap() - e).abs() < 1e-9);
            let nb: Vec<f64> = b.iter().map(|v| -v).collect();
            prop_assert!((quat_angle_error(&a, &nb).unwrap() - e).abs() < 1e-9);
        }
    }
}

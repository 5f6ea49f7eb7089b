//! Unit-quaternion helpers, `(w, x, y, z)` order.

pub type Quat = [f64; 4];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

/// Hamilton product `a ⊗ b`.
pub fn mul(a: &[f64], b: &[f64]) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn conj(q: &[f64]) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

pub fn norm(q: &[f64]) -> f64 {
    q.iter().take(4).map(|v| v * v).sum::<f64>().sqrt()
}

pub fn normalize(q: &mut [f64]) {
    let n = norm(q);
    if n > 0.0 {
        q.iter_mut().take(4).for_each(|v| *v /= n);
    }
}

pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Quat {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (s, c) = (0.5 * angle).sin_cos();
    [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]
}

/// Rotates body-frame vector `v` into the world frame: `q ⊗ (0, v) ⊗ q*`.
pub fn rotate(q: &[f64], v: [f64; 3]) -> [f64; 3] {
    let r = mul(&mul(q, &[0.0, v[0], v[1], v[2]]), &conj(q));
    [r[1], r[2], r[3]]
}

/// Kinematics `q̇ = ½ q ⊗ (0, ω)` with body rates `ω`.
pub fn derivative(q: &[f64], omega: &[f64]) -> Quat {
    let d = mul(q, &[0.0, omega[0], omega[1], omega[2]]);
    [0.5 * d[0], 0.5 * d[1], 0.5 * d[2], 0.5 * d[3]]
}

//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node to the [`Graph`]; node indices are
//! topologically ordered by construction, so the backward pass is a single
//! reverse sweep. Values are treated as matrices: the last axis is the
//! column axis and everything before it is folded into rows. Binary
//! element-wise ops accept a single-row right-hand side, broadcast across
//! rows (bias addition).

use super::tensor::{gemm, Tensor};
use super::NumericsError;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Relu(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice {
        src: Var,
        start: usize,
    },
    Mean(Var),
    SumSq(Var),
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    NormalizeSegment {
        src: Var,
        start: usize,
        len: usize,
        norms: Vec<f64>,
    },
}

/// Geometry of a valid (unpadded) 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn out_len(&self) -> usize {
        self.in_len + 1 - self.kernel
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Single-writer; discard and rebuild per step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

fn shape_err(msg: String) -> NumericsError {
    NumericsError::Shape(msg)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn broadcast_check(&self, a: Var, b: Var, name: &str) -> Result<(), NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() == tb.len() && ta.cols() == tb.cols() {
            return Ok(());
        }
        if tb.rows() == 1 && tb.cols() == ta.cols() {
            return Ok(());
        }
        Err(shape_err(format!(
            "{name}: incompatible shapes {:?} and {:?}",
            ta.shape(),
            tb.shape()
        )))
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        self.broadcast_check(a, b, name)?;
        let ta = self.value(a);
        let tb = self.value(b);
        let cols = ta.cols();
        let bv = tb.values();
        let values: Vec<f64> = if tb.len() == ta.len() {
            ta.values().iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            ta.values()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv[i % cols]))
                .collect()
        };
        let out = Tensor::new(ta.shape().to_vec(), values)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Matrix product. A 1-D right operand is treated as a column vector
    /// and the result is returned as a 1-D vector.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.shape().len() != 2 {
            return Err(shape_err(format!("matmul: lhs must be 2-D, got {:?}", ta.shape())));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (kb, n, vec_out) = match tb.shape().len() {
            1 => (tb.shape()[0], 1, true),
            2 => (tb.shape()[0], tb.shape()[1], false),
            _ => return Err(shape_err(format!("matmul: rhs must be 1-D or 2-D, got {:?}", tb.shape()))),
        };
        if kb != k {
            return Err(shape_err(format!(
                "matmul: inner dimensions differ ({:?} x {:?})",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, ta.values(), false, tb.values(), false, 0.0, &mut c);
        let shape = if vec_out { vec![m] } else { vec![m, n] };
        let out = Tensor::new(shape, c)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b, m, k, n }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Concatenate along the last axis. All parts must have the same rows.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(shape_err("concat: no inputs".into()));
        }
        let rows = self.value(parts[0]).rows();
        let one_d = self.value(parts[0]).shape().len() <= 1;
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err(format!(
                    "concat: row mismatch {} vs {}",
                    t.rows(),
                    rows
                )));
            }
            total += t.cols();
        }
        let mut values = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for r in 0..rows {
                values[r * total + offset..r * total + offset + c]
                    .copy_from_slice(&t.values()[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let shape = if one_d { vec![total] } else { vec![rows, total] };
        let out = Tensor::new(shape, values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `[start, start + len)` of every row.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let t = self.value(src);
        let cols = t.cols();
        if start + len > cols {
            return Err(shape_err(format!(
                "slice: [{start}, {}) out of range for {cols} columns",
                start + len
            )));
        }
        let rows = t.rows();
        let mut values = Vec::with_capacity(rows * len);
        for r in 0..rows {
            values.extend_from_slice(&t.values()[r * cols + start..r * cols + start + len]);
        }
        let shape = if t.shape().len() <= 1 { vec![len] } else { vec![rows, len] };
        let out = Tensor::new(shape, values)?;
        let rg = self.rg(src);
        Ok(self.push(out, Op::Slice { src, start }, rg))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.values().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Sum of squares of all elements, as a scalar.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().map(|v| v * v).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumSq(a), rg)
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let d = self.sub(a, b)?;
        let n = self.value(d).len().max(1);
        let s = self.sum_sq(d);
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Valid 1-D convolution. `input` is `[batch, in_channels * in_len]`
    /// (channel-major), `weight` is `[out_channels, in_channels * kernel]`,
    /// `bias` has `out_channels` entries. Output is
    /// `[batch, out_channels * out_len]`, channel-major.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    ) -> Result<Var, NumericsError> {
        let ConvGeom {
            in_channels: ci,
            out_channels: co,
            in_len: t_in,
            kernel: k,
        } = geom;
        if k == 0 || k > t_in {
            return Err(shape_err(format!("conv1d: kernel {k} vs length {t_in}")));
        }
        let x = self.value(input);
        if x.cols() != ci * t_in {
            return Err(shape_err(format!(
                "conv1d: input has {} columns, expected {}",
                x.cols(),
                ci * t_in
            )));
        }
        if self.value(weight).len() != co * ci * k || self.value(bias).len() != co {
            return Err(shape_err("conv1d: weight or bias size mismatch".into()));
        }
        let batch = x.rows();
        let t_out = geom.out_len();
        let width = ci * k;
        let mut cols = vec![0.0; batch * t_out * width];
        let xv = x.values();
        for b in 0..batch {
            for t in 0..t_out {
                let row = &mut cols[(b * t_out + t) * width..(b * t_out + t + 1) * width];
                for c in 0..ci {
                    let src = &xv[b * ci * t_in + c * t_in + t..b * ci * t_in + c * t_in + t + k];
                    row[c * k..(c + 1) * k].copy_from_slice(src);
                }
            }
        }
        // y[(b,t), o] = cols[(b,t), :] . w[o, :]
        let mut y = vec![0.0; batch * t_out * co];
        gemm(
            batch * t_out,
            width,
            co,
            1.0,
            &cols,
            false,
            self.value(weight).values(),
            true,
            0.0,
            &mut y,
        );
        let bv = self.value(bias).values();
        let mut out = vec![0.0; batch * co * t_out];
        for b in 0..batch {
            for t in 0..t_out {
                for o in 0..co {
                    out[b * co * t_out + o * t_out + t] = y[(b * t_out + t) * co + o] + bv[o];
                }
            }
        }
        let value = Tensor::new(vec![batch, co * t_out], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Scales columns `[start, start + len)` of every row to unit norm.
    pub fn normalize_segment(
        &mut self,
        src: Var,
        start: usize,
        len: usize,
    ) -> Result<Var, NumericsError> {
        let t = self.value(src);
        let cols = t.cols();
        if start + len > cols {
            return Err(shape_err("normalize_segment: range out of bounds".into()));
        }
        let mut values = t.values().to_vec();
        let rows = t.rows();
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let seg = &mut values[r * cols + start..r * cols + start + len];
            let n = seg.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                seg.iter_mut().for_each(|v| *v /= n);
            }
            norms.push(n);
        }
        let out = Tensor::new(t.shape().to_vec(), values)?;
        let rg = self.rg(src);
        Ok(self.push(
            out,
            Op::NormalizeSegment {
                src,
                start,
                len,
                norms,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar loss. A graph can be differentiated once;
    /// a second call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.grads.is_some() {
            return Err(NumericsError::Contract(
                "backward already ran on this graph".into(),
            ));
        }
        if !self.value(loss).is_scalar() || !self.value(loss).shape().is_empty() {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward loss w.r.t. `v`, if any flowed there.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: Var,
        f: impl FnOnce(&mut [f64]),
    ) {
        if !self.rg(target) {
            return;
        }
        let slot = &mut grads[target.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.value(target).len()]);
        }
        f(slot.as_mut().unwrap());
    }

    /// Adds `g` into the gradient of `target`, reducing over rows when the
    /// target was broadcast.
    fn accumulate_broadcast(&self, grads: &mut [Option<Vec<f64>>], target: Var, g: &[f64], sign: f64) {
        let n = self.value(target).len();
        self.accumulate(grads, target, |acc| {
            if n == g.len() {
                acc.iter_mut().zip(g).for_each(|(a, &x)| *a += sign * x);
            } else {
                for (i, &x) in g.iter().enumerate() {
                    acc[i % n] += sign * x;
                }
            }
        });
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_broadcast(grads, *a, g, 1.0);
                self.accumulate_broadcast(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(grads, *a, g, 1.0);
                self.accumulate_broadcast(grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).values();
                let bv = self.value(*b).values();
                let nb = bv.len();
                if self.rg(*a) {
                    let ga: Vec<f64> = g.iter().enumerate().map(|(i, &x)| x * bv[i % nb]).collect();
                    self.accumulate_broadcast(grads, *a, &ga, 1.0);
                }
                if self.rg(*b) {
                    let gb: Vec<f64> = g.iter().zip(av).map(|(&x, &y)| x * y).collect();
                    self.accumulate_broadcast(grads, *b, &gb, 1.0);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, |acc| {
                    acc.iter_mut().zip(g).for_each(|(x, &y)| *x += s * y)
                });
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if self.rg(*a) {
                    let bv = self.value(*b).values();
                    // dA = dC . B^T
                    self.accumulate(grads, *a, |acc| {
                        gemm(m, n, k, 1.0, g, false, bv, true, 1.0, acc)
                    });
                }
                if self.rg(*b) {
                    let av = self.value(*a).values();
                    // dB = A^T . dC
                    self.accumulate(grads, *b, |acc| {
                        gemm(k, m, n, 1.0, av, true, g, false, 1.0, acc)
                    });
                }
            }
            Op::Relu(a) => {
                let out = self.nodes[idx].value.values();
                self.accumulate(grads, *a, |acc| {
                    for ((x, &y), &o) in acc.iter_mut().zip(g).zip(out) {
                        if o > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let out = self.nodes[idx].value.values();
                self.accumulate(grads, *a, |acc| {
                    for ((x, &y), &o) in acc.iter_mut().zip(g).zip(out) {
                        *x += y * (1.0 - o * o);
                    }
                });
            }
            Op::Concat(parts) => {
                let total = self.nodes[idx].value.cols();
                let rows = self.nodes[idx].value.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    self.accumulate(grads, p, |acc| {
                        for r in 0..rows {
                            for j in 0..c {
                                acc[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::Slice { src, start } => {
                let cols = self.value(*src).cols();
                let len = self.nodes[idx].value.cols();
                let rows = self.nodes[idx].value.rows();
                let start = *start;
                self.accumulate(grads, *src, |acc| {
                    for r in 0..rows {
                        for j in 0..len {
                            acc[r * cols + start + j] += g[r * len + j];
                        }
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                let s = g[0] / n;
                self.accumulate(grads, *a, |acc| acc.iter_mut().for_each(|x| *x += s));
            }
            Op::SumSq(a) => {
                let av = self.value(*a).values();
                let s = 2.0 * g[0];
                self.accumulate(grads, *a, |acc| {
                    acc.iter_mut().zip(av).for_each(|(x, &v)| *x += s * v)
                });
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let ConvGeom {
                    in_channels: ci,
                    out_channels: co,
                    in_len: t_in,
                    kernel: k,
                } = *geom;
                let t_out = geom.out_len();
                let batch = self.nodes[idx].value.rows();
                let width = ci * k;
                // Back to [(b,t), o] layout.
                let mut gy = vec![0.0; batch * t_out * co];
                for b in 0..batch {
                    for o in 0..co {
                        for t in 0..t_out {
                            gy[(b * t_out + t) * co + o] = g[b * co * t_out + o * t_out + t];
                        }
                    }
                }
                if self.rg(*bias) {
                    self.accumulate(grads, *bias, |acc| {
                        for row in gy.chunks_exact(co) {
                            acc.iter_mut().zip(row).for_each(|(a, &x)| *a += x);
                        }
                    });
                }
                if self.rg(*weight) {
                    // dW[o, :] = sum_(b,t) gy[(b,t), o] * cols[(b,t), :]
                    self.accumulate(grads, *weight, |acc| {
                        gemm(co, batch * t_out, width, 1.0, &gy, true, cols, false, 1.0, acc)
                    });
                }
                if self.rg(*input) {
                    let wv = self.value(*weight).values();
                    let mut dcols = vec![0.0; batch * t_out * width];
                    gemm(batch * t_out, co, width, 1.0, &gy, false, wv, false, 0.0, &mut dcols);
                    self.accumulate(grads, *input, |acc| {
                        for b in 0..batch {
                            for t in 0..t_out {
                                let row = &dcols[(b * t_out + t) * width..(b * t_out + t + 1) * width];
                                for c in 0..ci {
                                    for j in 0..k {
                                        acc[b * ci * t_in + c * t_in + t + j] += row[c * k + j];
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::NormalizeSegment {
                src,
                start,
                len,
                norms,
            } => {
                let out = self.nodes[idx].value.values();
                let cols = self.nodes[idx].value.cols();
                let (start, len) = (*start, *len);
                self.accumulate(grads, *src, |acc| {
                    for (r, &n) in norms.iter().enumerate() {
                        let base = r * cols;
                        for j in 0..cols {
                            if j < start || j >= start + len {
                                acc[base + j] += g[base + j];
                            }
                        }
                        if n == 0.0 {
                            continue;
                        }
                        let y = &out[base + start..base + start + len];
                        let gs = &g[base + start..base + start + len];
                        let dot: f64 = y.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..len {
                            acc[base + start + j] += (gs[j] - y[j] * dot) / n;
                        }
                    }
                });
            }
        }
    }
}

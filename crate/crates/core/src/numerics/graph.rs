//! Dynamic computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every optimisation step: leaves are bound
//! with [`Graph::param`] (differentiable) or [`Graph::constant`], every
//! operation appends one node, and [`Graph::backward`] replays the nodes in
//! reverse order. Nodes are appended only after their inputs exist, so the
//! node list is always in topological order.
//!
//! Gradient buffers are allocated lazily. A leaf that the loss does not
//! depend on keeps `grad == None` instead of a zero buffer, and constants
//! never receive one. Calling `backward` again discards the previous
//! gradients and recomputes them; values stay readable afterwards.

use super::tensor::{dot, matmul_acc, matmul_at_acc, matmul_bt_acc, sigmoid, softmax_into, Tensor};
use super::NumericsError;
use crate::perturbation::gaussian_weights;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

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
    AddBias(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    BatchMatVec(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    L1Norm(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Softmax(Var),
    CrossEntropyLogits { logits: Var, target: Vec<f64> },
    BinaryCrossEntropyLogits { logits: Var, target: Vec<f64> },
    Mse(Var, Var),
    SortRows { input: Var, perm: Vec<usize> },
    GaussianBlur { x: Var, mask: Var, sigma_max: f64 },
}

/// The tape: an append-only list of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    // element counts, readable while a value is moved out during backward
    lens: Vec<usize>,
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

/// (outer, dim, inner) decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires: bool) -> Var {
        self.lens.push(value.len());
        self.values.push(value);
        self.ops.push(op);
        self.requires.push(requires);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Gradient of the last `backward` call, if any flowed into `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grad(v)
            .map(|g| Tensor::new(self.values[v.0].shape().to_vec(), g.to_vec()).expect("grad shape"))
    }

    fn binary_same_shape(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        node: Op,
    ) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let requires = self.req(a) || self.req(b);
        Ok(self.push(value, node, requires))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a vector of length `last_dim(a)` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.values[a.0], &self.values[bias.0]);
        let cols = ta.last_dim();
        if tb.len() != cols {
            return Err(mismatch("add_bias", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (v, &b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let requires = self.req(a) || self.req(bias);
        Ok(self.push(value, Op::AddBias(a, bias), requires))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.values[a.0].map(|x| scale * x + shift);
        let requires = self.req(a);
        self.push(value, Op::Affine(a, scale), requires)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    /// Matrix product of a `[r, k]` and a `[k, c]` tensor.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (r, k, c) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; r * c];
        matmul_acc(ta.data(), tb.data(), &mut out, r, k, c);
        let value = Tensor::new(vec![r, c], out)?;
        let requires = self.req(a) || self.req(b);
        Ok(self.push(value, Op::MatMul(a, b), requires))
    }

    /// Row-wise product with per-row matrices: `x [B, k]`, `w [B, k, c]` to `[B, c]`.
    pub fn batch_matvec(&mut self, x: Var, w: Var) -> Result<Var, NumericsError> {
        let (tx, tw) = (&self.values[x.0], &self.values[w.0]);
        if tx.shape().len() != 2
            || tw.shape().len() != 3
            || tx.shape()[0] != tw.shape()[0]
            || tx.shape()[1] != tw.shape()[1]
        {
            return Err(mismatch("batch_matvec", tx, tw));
        }
        let (b, k, c) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        let mut out = vec![0.0; b * c];
        for i in 0..b {
            matmul_acc(
                &tx.data()[i * k..(i + 1) * k],
                &tw.data()[i * k * c..(i + 1) * k * c],
                &mut out[i * c..(i + 1) * c],
                1,
                k,
                c,
            );
        }
        let value = Tensor::new(vec![b, c], out)?;
        let requires = self.req(x) || self.req(w);
        Ok(self.push(value, Op::BatchMatVec(x, w), requires))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.values[a.0].map(f);
        let requires = self.req(a);
        self.push(value, op, requires)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        if let Some(&bad) = self.values[a.0].data().iter().find(|&&v| v <= 0.0) {
            return Err(NumericsError::Domain {
                op: "log",
                value: bad,
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |v| v.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.values[a.0].sum());
        let requires = self.req(a);
        self.push(value, Op::Sum(a), requires)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.values[a.0].mean());
        let requires = self.req(a);
        self.push(value, Op::Mean(a), requires)
    }

    pub fn l1_norm(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.values[a.0].data().iter().map(|v| v.abs()).sum());
        let requires = self.req(a);
        self.push(value, Op::L1Norm(a), requires)
    }

    /// Sum of a list of scalars (or same-shape tensors).
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, NumericsError> {
        let mut iter = terms.iter();
        let mut acc = *iter.next().ok_or(NumericsError::EmptyInput { op: "add_all" })?;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let first = self.values[parts.first().ok_or(NumericsError::EmptyInput { op: "concat" })?.0].clone();
        if axis >= first.shape().len() {
            return Err(NumericsError::Axis {
                op: "concat",
                axis,
                shape: first.shape().to_vec(),
            });
        }
        let mut total = 0;
        for p in parts {
            let t = &self.values[p.0];
            let same_rank = t.shape().len() == first.shape().len();
            let compatible = same_rank
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &first, t));
            }
            total += t.shape()[axis];
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = &self.values[p.0];
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let requires = parts.iter().any(|&p| self.req(p));
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            requires,
        ))
    }

    /// `len` consecutive entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, NumericsError> {
        let t = &self.values[a.0];
        if axis >= t.shape().len() || start + len > t.shape()[axis] {
            return Err(NumericsError::Axis {
                op: "slice",
                axis,
                shape: t.shape().to_vec(),
            });
        }
        let (outer, dim, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, data)?;
        let requires = self.req(a);
        Ok(self.push(value, Op::Slice { input: a, axis, start }, requires))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = self.values[a.0].clone().reshape(shape)?;
        let requires = self.req(a);
        Ok(self.push(value, Op::Reshape(a), requires))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = &self.values[a.0];
        let cols = t.last_dim();
        let mut out = t.clone();
        for (row, o) in t.data().chunks(cols).zip(out.data_mut().chunks_mut(cols)) {
            softmax_into(row, o);
        }
        let requires = self.req(a);
        self.push(out, Op::Softmax(a), requires)
    }

    /// Cross-entropy `-sum_j target_j ln softmax(logits)_j` for every row of
    /// the last axis. `target` is a constant with the shape of `logits`.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, target: &Tensor) -> Result<Var, NumericsError> {
        let t = &self.values[logits.0];
        if t.shape() != target.shape() {
            return Err(mismatch("cross_entropy_with_logits", t, target));
        }
        let cols = t.last_dim();
        let rows = t.len() / cols;
        let mut out = Vec::with_capacity(rows);
        for (z, y) in t.data().chunks(cols).zip(target.data().chunks(cols)) {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.push(z.iter().zip(y).map(|(zj, yj)| yj * (lse - zj)).sum());
        }
        let shape = if t.shape().len() > 1 {
            t.shape()[..t.shape().len() - 1].to_vec()
        } else {
            vec![1]
        };
        let value = Tensor::new(shape, out)?;
        let requires = self.req(logits);
        Ok(self.push(
            value,
            Op::CrossEntropyLogits {
                logits,
                target: target.data().to_vec(),
            },
            requires,
        ))
    }

    /// Elementwise binary cross-entropy of logits against targets in [0, 1].
    pub fn binary_cross_entropy_with_logits(&mut self, logits: Var, target: &Tensor) -> Result<Var, NumericsError> {
        let t = &self.values[logits.0];
        if t.shape() != target.shape() {
            return Err(mismatch("binary_cross_entropy_with_logits", t, target));
        }
        let data = t
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let requires = self.req(logits);
        Ok(self.push(
            value,
            Op::BinaryCrossEntropyLogits {
                logits,
                target: target.data().to_vec(),
            },
            requires,
        ))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(mismatch("mse", ta, tb));
        }
        let n = ta.len().max(1) as f64;
        let v = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
        let requires = self.req(a) || self.req(b);
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b), requires))
    }

    /// Sorts every row of the last axis in ascending order.
    pub fn sort_rows(&mut self, a: Var) -> Var {
        let t = &self.values[a.0];
        let cols = t.last_dim();
        let mut perm = Vec::with_capacity(t.len());
        let mut data = Vec::with_capacity(t.len());
        for row in t.data().chunks(cols) {
            let mut idx: Vec<usize> = (0..cols).collect();
            idx.sort_by(|&i, &j| row[i].total_cmp(&row[j]));
            data.extend(idx.iter().map(|&i| row[i]));
            perm.extend(idx);
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("sort keeps shape");
        let requires = self.req(a);
        self.push(value, Op::SortRows { input: a, perm }, requires)
    }

    /// Temporal Gaussian blur of `x` (`[.., T, n]`) whose per-cell bandwidth is
    /// `sigma_max * (1 - mask)`.
    pub fn gaussian_blur(&mut self, x: Var, mask: Var, sigma_max: f64) -> Result<Var, NumericsError> {
        let (tx, tm) = (&self.values[x.0], &self.values[mask.0]);
        if tx.shape() != tm.shape() || tx.shape().len() < 2 {
            return Err(mismatch("gaussian_blur", tx, tm));
        }
        let rank = tx.shape().len();
        let (steps, feats) = (tx.shape()[rank - 2], tx.shape()[rank - 1]);
        let block = steps * feats;
        let mut out = vec![0.0; tx.len()];
        for b in 0..tx.len() / block {
            let xs = &tx.data()[b * block..(b + 1) * block];
            let ms = &tm.data()[b * block..(b + 1) * block];
            for t in 0..steps {
                for i in 0..feats {
                    let sigma = sigma_max * (1.0 - ms[t * feats + i]);
                    let (start, w) = gaussian_weights(steps, t, sigma);
                    out[b * block + t * feats + i] =
                        w.iter().enumerate().map(|(j, wj)| wj * xs[(start + j) * feats + i]).sum();
                }
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let requires = self.req(x) || self.req(mask);
        Ok(self.push(value, Op::GaussianBlur { x, mask, sigma_max }, requires))
    }

    /// Populates gradients of every differentiable node with respect to the
    /// scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.values.is_empty() {
            return Err(NumericsError::EmptyTape);
        }
        if !self.values[loss.0].is_scalar() {
            return Err(NumericsError::NotScalar {
                shape: self.values[loss.0].shape().to_vec(),
            });
        }
        for g in &mut self.grads {
            *g = None;
        }
        if !self.requires[loss.0] {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &grad);
            self.grads[i] = Some(grad);
        }
        Ok(())
    }

    /// Gradient buffer of `v`, zero-initialised on first use. `None` for
    /// nodes that do not require gradients.
    fn slot(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.requires[v.0] {
            return None;
        }
        let len = self.lens[v.0];
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn acc_scaled(&mut self, v: Var, g: &[f64], scale: f64) {
        if let Some(buf) = self.slot(v) {
            for (b, &x) in buf.iter_mut().zip(g) {
                *b += scale * x;
            }
        }
    }

    fn acc_map(&mut self, v: Var, g: &[f64], local: impl Fn(usize) -> f64) {
        if !self.requires[v.0] {
            return;
        }
        let d: Vec<f64> = g.iter().enumerate().map(|(k, &x)| x * local(k)).collect();
        let buf = self.slot(v).expect("requires");
        for (b, x) in buf.iter_mut().zip(d) {
            *b += x;
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = self.ops[i].clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_scaled(a, g, 1.0);
                self.acc_scaled(b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_scaled(a, g, 1.0);
                self.acc_scaled(b, g, -1.0);
            }
            Op::Mul(a, b) => {
                if self.req(a) {
                    let other = self.values[b.0].data().to_vec();
                    self.acc_map(a, g, |k| other[k]);
                }
                if self.req(b) {
                    let other = self.values[a.0].data().to_vec();
                    self.acc_map(b, g, |k| other[k]);
                }
            }
            Op::AddBias(a, bias) => {
                self.acc_scaled(a, g, 1.0);
                if let Some(buf) = self.slot(bias) {
                    let cols = buf.len();
                    for row in g.chunks(cols) {
                        for (b, &x) in buf.iter_mut().zip(row) {
                            *b += x;
                        }
                    }
                }
            }
            Op::Affine(a, scale) => self.acc_scaled(a, g, scale),
            Op::MatMul(a, b) => {
                let (r, k) = (self.values[a.0].shape()[0], self.values[a.0].shape()[1]);
                let c = self.values[b.0].shape()[1];
                if a == b {
                    let v = self.values[a.0].clone();
                    if let Some(buf) = self.slot(a) {
                        matmul_bt_acc(g, v.data(), buf, r, k, c);
                        matmul_at_acc(v.data(), g, buf, r, k, c);
                    }
                    return;
                }
                if self.req(a) {
                    let bv = std::mem::take(&mut self.values[b.0]);
                    matmul_bt_acc(g, bv.data(), self.slot(a).expect("requires"), r, k, c);
                    self.values[b.0] = bv;
                }
                if self.req(b) {
                    let av = std::mem::take(&mut self.values[a.0]);
                    matmul_at_acc(av.data(), g, self.slot(b).expect("requires"), r, k, c);
                    self.values[a.0] = av;
                }
            }
            Op::BatchMatVec(x, w) => {
                let (b, k, c) = {
                    let s = self.values[w.0].shape();
                    (s[0], s[1], s[2])
                };
                if self.req(x) {
                    let wv = std::mem::take(&mut self.values[w.0]);
                    let buf = self.slot(x).expect("requires");
                    for n in 0..b {
                        let wn = &wv.data()[n * k * c..(n + 1) * k * c];
                        let gn = &g[n * c..(n + 1) * c];
                        for kk in 0..k {
                            buf[n * k + kk] += dot(gn, &wn[kk * c..(kk + 1) * c]);
                        }
                    }
                    self.values[w.0] = wv;
                }
                if self.req(w) {
                    let xv = std::mem::take(&mut self.values[x.0]);
                    let buf = self.slot(w).expect("requires");
                    for n in 0..b {
                        let gn = &g[n * c..(n + 1) * c];
                        for kk in 0..k {
                            let xk = xv.data()[n * k + kk];
                            let row = &mut buf[(n * k + kk) * c..(n * k + kk + 1) * c];
                            for (o, &gv) in row.iter_mut().zip(gn) {
                                *o += xk * gv;
                            }
                        }
                    }
                    self.values[x.0] = xv;
                }
            }
            Op::Sigmoid(a) => {
                let y = std::mem::take(&mut self.values[i]);
                self.acc_map(a, g, |k| y.data()[k] * (1.0 - y.data()[k]));
                self.values[i] = y;
            }
            Op::Tanh(a) => {
                let y = std::mem::take(&mut self.values[i]);
                self.acc_map(a, g, |k| 1.0 - y.data()[k] * y.data()[k]);
                self.values[i] = y;
            }
            Op::Exp(a) => {
                let y = std::mem::take(&mut self.values[i]);
                self.acc_map(a, g, |k| y.data()[k]);
                self.values[i] = y;
            }
            Op::Log(a) => {
                let x = std::mem::take(&mut self.values[a.0]);
                self.acc_map(a, g, |k| 1.0 / x.data()[k]);
                self.values[a.0] = x;
            }
            Op::Abs(a) | Op::L1Norm(a) => {
                let x = std::mem::take(&mut self.values[a.0]);
                let scalar = matches!(self.ops[i], Op::L1Norm(_));
                let sign = |v: f64| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                if scalar {
                    let g0 = g[0];
                    let full: Vec<f64> = vec![g0; x.len()];
                    self.acc_map(a, &full, |k| sign(x.data()[k]));
                } else {
                    self.acc_map(a, g, |k| sign(x.data()[k]));
                }
                self.values[a.0] = x;
            }
            Op::Clamp(a, lo, hi) => {
                let x = std::mem::take(&mut self.values[a.0]);
                self.acc_map(a, g, |k| {
                    let v = x.data()[k];
                    if (lo..=hi).contains(&v) {
                        1.0
                    } else {
                        0.0
                    }
                });
                self.values[a.0] = x;
            }
            Op::Sum(a) => {
                if let Some(buf) = self.slot(a) {
                    buf.iter_mut().for_each(|b| *b += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(buf) = self.slot(a) {
                    let s = g[0] / buf.len() as f64;
                    buf.iter_mut().for_each(|b| *b += s);
                }
            }
            Op::Concat { parts, axis } => {
                let shape = self.values[i].shape().to_vec();
                let (outer, total, inner) = split_axis(&shape, axis);
                let mut offset = 0;
                for p in parts {
                    let dim = self.values[p.0].shape()[axis];
                    if let Some(buf) = self.slot(p) {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            let dst = o * dim * inner;
                            for (b, &x) in buf[dst..dst + dim * inner].iter_mut().zip(&g[src..src + dim * inner]) {
                                *b += x;
                            }
                        }
                    }
                    offset += dim;
                }
            }
            Op::Slice { input, axis, start } => {
                let len = self.values[i].shape()[axis];
                let in_shape = self.values[input.0].shape().to_vec();
                let (outer, dim, inner) = split_axis(&in_shape, axis);
                if let Some(buf) = self.slot(input) {
                    for o in 0..outer {
                        let dst = o * dim * inner + start * inner;
                        let src = o * len * inner;
                        for (b, &x) in buf[dst..dst + len * inner].iter_mut().zip(&g[src..src + len * inner]) {
                            *b += x;
                        }
                    }
                }
            }
            Op::Reshape(a) => self.acc_scaled(a, g, 1.0),
            Op::Softmax(a) => {
                let y = std::mem::take(&mut self.values[i]);
                if let Some(buf) = self.slot(a) {
                    let cols = y.last_dim();
                    for ((yr, gr), br) in y.data().chunks(cols).zip(g.chunks(cols)).zip(buf.chunks_mut(cols)) {
                        let inner = dot(yr, gr);
                        for ((b, &yj), &gj) in br.iter_mut().zip(yr).zip(gr) {
                            *b += yj * (gj - inner);
                        }
                    }
                }
                self.values[i] = y;
            }
            Op::CrossEntropyLogits { logits, target } => {
                let z = std::mem::take(&mut self.values[logits.0]);
                if let Some(buf) = self.slot(logits) {
                    let cols = z.last_dim();
                    let mut p = vec![0.0; cols];
                    for (r, ((zr, yr), br)) in z
                        .data()
                        .chunks(cols)
                        .zip(target.chunks(cols))
                        .zip(buf.chunks_mut(cols))
                        .enumerate()
                    {
                        softmax_into(zr, &mut p);
                        let mass: f64 = yr.iter().sum();
                        for ((b, &pj), &yj) in br.iter_mut().zip(&p).zip(yr) {
                            *b += g[r] * (pj * mass - yj);
                        }
                    }
                }
                self.values[logits.0] = z;
            }
            Op::BinaryCrossEntropyLogits { logits, target } => {
                let z = std::mem::take(&mut self.values[logits.0]);
                self.acc_map(logits, g, |k| sigmoid(z.data()[k]) - target[k]);
                self.values[logits.0] = z;
            }
            Op::Mse(a, b) => {
                let diff: Vec<f64> = self.values[a.0]
                    .data()
                    .iter()
                    .zip(self.values[b.0].data())
                    .map(|(x, y)| x - y)
                    .collect();
                let s = 2.0 * g[0] / diff.len().max(1) as f64;
                self.acc_scaled(a, &diff, s);
                self.acc_scaled(b, &diff, -s);
            }
            Op::SortRows { input, perm } => {
                let cols = self.values[i].last_dim();
                if let Some(buf) = self.slot(input) {
                    for (r, (pr, gr)) in perm.chunks(cols).zip(g.chunks(cols)).enumerate() {
                        for (&src, &gv) in pr.iter().zip(gr) {
                            buf[r * cols + src] += gv;
                        }
                    }
                }
            }
            Op::GaussianBlur { x, mask, sigma_max } => self.blur_backward(i, g, x, mask, sigma_max),
        }
    }

    fn blur_backward(&mut self, out: usize, g: &[f64], x: Var, mask: Var, sigma_max: f64) {
        let xv = std::mem::take(&mut self.values[x.0]);
        let mv = std::mem::take(&mut self.values[mask.0]);
        let rank = xv.shape().len();
        let (steps, feats) = (xv.shape()[rank - 2], xv.shape()[rank - 1]);
        let block = steps * feats;
        let outv = &self.values[out];
        let mut dx = self.req(x).then(|| vec![0.0; xv.len()]);
        let mut dm = self.req(mask).then(|| vec![0.0; mv.len()]);
        for b in 0..xv.len() / block {
            let xs = &xv.data()[b * block..(b + 1) * block];
            for t in 0..steps {
                for i in 0..feats {
                    let cell = b * block + t * feats + i;
                    let sigma = sigma_max * (1.0 - mv.data()[cell]);
                    let (start, w) = gaussian_weights(steps, t, sigma);
                    if let Some(dx) = dx.as_mut() {
                        for (j, wj) in w.iter().enumerate() {
                            dx[b * block + (start + j) * feats + i] += g[cell] * wj;
                        }
                    }
                    if let Some(dm) = dm.as_mut() {
                        if w.len() > 1 {
                            // d out / d sigma is the kernel-weighted covariance of x and d^2, over sigma^3
                            let y = outv.data()[cell];
                            let mut cov = 0.0;
                            for (j, wj) in w.iter().enumerate() {
                                let d = (start + j) as f64 - t as f64;
                                cov += wj * d * d * (xs[(start + j) * feats + i] - y);
                            }
                            dm[cell] += g[cell] * cov / sigma.powi(3) * (-sigma_max);
                        }
                    }
                }
            }
        }
        self.values[x.0] = xv;
        self.values[mask.0] = mv;
        if let Some(dx) = dx {
            self.acc_scaled(x, &dx, 1.0);
        }
        if let Some(dm) = dm {
            self.acc_scaled(mask, &dm, 1.0);
        }
    }
}

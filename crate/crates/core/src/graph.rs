//! Define-by-run reverse-mode differentiation.
//!
//! Every op appends a node to the [`Graph`]; nodes only ever reference
//! earlier nodes, so insertion order is a topological order and the
//! backward pass is a single reverse sweep. A graph supports exactly one
//! backward pass.
//!
//! The graph also acts as an allocation accountant: it tracks the number
//! of live `f64` elements it retains (values plus cached intermediates),
//! the largest single buffer, and the multiply-accumulates performed by the
//! forward ops.

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{axis_split, gemm_nt, gemm_tn, Tensor};

pub const GELU_COEFF: f64 = 0.044715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    Reduce { x: Var, axis: usize, kind: ReduceKind },
    SumAll(Var),
    Concat { a: Var, b: Var, axis: usize },
    RepeatRows { v: Var, times: usize },
    Mul(Var, Var),
    Add(Var, Var),
    AddBias { x: Var, b: Var },
    Scale { x: Var, c: f64 },
    Transpose(Var),
    Reshape(Var),
    Mask { x: Var, mask: Vec<f64> },
    LayerNorm { x: Var, gain: Var, shift: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Memory and arithmetic counters for one forward trace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Accountant {
    pub live_elements: usize,
    pub peak_live_elements: usize,
    pub largest_buffer: usize,
    pub macs: u64,
}

impl Accountant {
    fn alloc(&mut self, n: usize) {
        self.live_elements += n;
        self.peak_live_elements = self.peak_live_elements.max(self.live_elements);
        self.largest_buffer = self.largest_buffer.max(n);
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Var>,
    backward_done: bool,
    stats: Accountant,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn gelu_scalar(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let t = (k * (x + GELU_COEFF * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_COEFF * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// New graph with every parameter of `store` bound as a tracked leaf.
    pub fn with_params(store: &ParamStore) -> Self {
        let mut g = Self::new();
        g.bind_params(store);
        g
    }

    pub fn bind_params(&mut self, store: &ParamStore) {
        self.params = store.tensors().iter().map(|t| self.leaf(t.clone(), true)).collect();
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.index()]
    }

    /// Gradients of all bound parameters, in store order. Parameters the
    /// loss does not depend on get zeros.
    pub fn param_grads(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|&v| self.grad(v).expect("bound parameters track gradients"))
            .collect()
    }

    pub fn stats(&self) -> Accountant {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `None` when `v` does not track gradients; zeros when it does but was
    /// not reached by backward.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let shape = node.value.shape().to_vec();
        Some(match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        })
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad, 0)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, cached: usize) -> Var {
        self.stats.alloc(value.numel() + cached);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::tensor::matmul(self.value(a), self.value(b))?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let n = self.shape(b)[1];
        self.stats.macs += (m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg, 0))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| gelu_scalar(v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg, 0)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::Axis {
                op: "softmax",
                axis,
                rank: t.rank(),
            });
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| src[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..len {
                    let e = (src[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    out[idx(a)] /= total;
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, rg, 0))
    }

    pub fn reduce(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::Axis {
                op: "reduce",
                axis,
                rank: t.rank(),
            });
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        if kind == ReduceKind::Mean {
            let scale = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reduce { x, axis, kind }, rg, 0))
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, ReduceKind::Sum)
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, ReduceKind::Mean)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total), Op::SumAll(x), rg, 0)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != tb.rank() {
            return Err(shape_err("concat", ta.shape(), tb.shape()));
        }
        if axis >= ta.rank() {
            return Err(Error::Axis {
                op: "concat",
                axis,
                rank: ta.rank(),
            });
        }
        let compatible = ta
            .shape()
            .iter()
            .zip(tb.shape())
            .enumerate()
            .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(shape_err("concat", ta.shape(), tb.shape()));
        }
        let (outer, la, inner) = axis_split(ta.shape(), axis);
        let lb = tb.shape()[axis];
        let mut out = Vec::with_capacity(ta.numel() + tb.numel());
        for o in 0..outer {
            out.extend_from_slice(&ta.data()[o * la * inner..(o + 1) * la * inner]);
            out.extend_from_slice(&tb.data()[o * lb * inner..(o + 1) * lb * inner]);
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = la + lb;
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Concat { a, b, axis }, rg, 0))
    }

    /// `[d]` → `[times × d]`
    pub fn repeat_rows(&mut self, v: Var, times: usize) -> Result<Var> {
        let t = self.value(v);
        if t.rank() != 1 || times == 0 {
            return Err(shape_err("repeat_rows", t.shape(), &[times]));
        }
        let d = t.numel();
        let out = t.data().repeat(times);
        let out = Tensor::new(vec![times, d], out)?;
        let rg = self.rg(&[v]);
        Ok(self.push(out, Op::RepeatRows { v, times }, rg, 0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.stats.macs += out.numel() as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg, 0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg, 0))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Adds `b[d]` to every trailing-axis row of `x[..., d]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let d = *tx.shape().last().unwrap_or(&1);
        if tb.rank() != 1 || tb.numel() != d || tx.rank() == 0 {
            return Err(shape_err("add_bias", tx.shape(), tb.shape()));
        }
        let bias = tb.data();
        let data = tx
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(bias).map(|(a, b)| a + b))
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddBias { x, b }, rg, 0))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * c).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.stats.macs += out.numel() as u64;
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale { x, c }, rg, 0)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(shape_err("transpose", t.shape(), &[]));
        }
        let out = t.transpose();
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg, 0))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg, 0))
    }

    /// Elementwise product with a constant mask (inverted dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(shape_err("mask", t.shape(), &[mask.len()]));
        }
        let data = t.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        let cached = mask.len();
        Ok(self.push(out, Op::Mask { x, mask }, rg, cached))
    }

    /// Row-wise standardization over the trailing axis followed by `gain`/`shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (tx, tg, ts) = (self.value(x), self.value(gain), self.value(shift));
        let d = *tx.shape().last().unwrap_or(&0);
        if tx.rank() == 0 || tg.shape() != [d] || ts.shape() != [d] {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.numel() / d;
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mu) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + ts.data()[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, shift]);
        let cached = xhat.len() + inv_std.len();
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
            rg,
            cached,
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits[B×K]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 || t.rows() != labels.len() {
            return Err(shape_err("softmax_cross_entropy", t.shape(), &[labels.len()]));
        }
        let (b, k) = (t.rows(), t.cols());
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label: bad, classes: k });
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let rg = self.rg(&[logits]);
        let cached = probs.len();
        Ok(self.push(
            Tensor::scalar(loss / b as f64),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
            cached,
        ))
    }

    /// Accumulates adjoints of the scalar `loss` into every tracked node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_done = true;
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Temporarily move the op out so node values can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, self.value(*b).data(), &mut da, m, n, k);
                    self.accumulate(*a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(self.value(*a).data(), g, &mut db, m, k, n);
                    self.accumulate(*b, db);
                }
            }
            Op::Gelu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| gv * gelu_grad_scalar(v))
                    .collect();
                self.accumulate(*x, dx);
            }
            Op::Softmax { x, axis } => {
                let y = &self.nodes[i].value;
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let y = y.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + j;
                        let dot: f64 = (0..len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                        for a in 0..len {
                            dx[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                self.accumulate(*x, dx);
            }
            Op::Reduce { x, axis, kind } => {
                let (outer, len, inner) = axis_split(self.shape(*x), *axis);
                let scale = match kind {
                    ReduceKind::Sum => 1.0,
                    ReduceKind::Mean => 1.0 / len as f64,
                };
                self.accumulate_with(*x, |dx| {
                    for o in 0..outer {
                        for a in 0..len {
                            let base = (o * len + a) * inner;
                            for j in 0..inner {
                                dx[base + j] += scale * g[o * inner + j];
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let g0 = g[0];
                self.accumulate_with(*x, |dx| dx.iter_mut().for_each(|v| *v += g0));
            }
            Op::Concat { a, b, axis } => {
                let (outer, la, inner) = axis_split(self.shape(*a), *axis);
                let lb = self.shape(*b)[*axis];
                let (sa, sb) = (la * inner, lb * inner);
                let mut da = Vec::with_capacity(outer * sa);
                let mut db = Vec::with_capacity(outer * sb);
                for o in 0..outer {
                    let base = o * (sa + sb);
                    da.extend_from_slice(&g[base..base + sa]);
                    db.extend_from_slice(&g[base + sa..base + sa + sb]);
                }
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::RepeatRows { v, times } => {
                let d = self.value(*v).numel();
                self.accumulate_with(*v, |dv| {
                    for r in 0..*times {
                        for j in 0..d {
                            dv[j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let da = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    self.accumulate(*a, da);
                }
                if self.requires_grad(*b) {
                    let db = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    self.accumulate(*b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g.to_vec());
                self.accumulate(*b, g.to_vec());
            }
            Op::AddBias { x, b } => {
                self.accumulate(*x, g.to_vec());
                let d = self.value(*b).numel();
                self.accumulate_with(*b, |db| {
                    for row in g.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                });
            }
            Op::Scale { x, c } => {
                let dx = g.iter().map(|v| v * c).collect();
                self.accumulate(*x, dx);
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                self.accumulate(*x, dx);
            }
            Op::Reshape(x) => self.accumulate(*x, g.to_vec()),
            Op::Mask { x, mask } => {
                let dx = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                self.accumulate(*x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data().to_vec();
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; xhat.len()];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let base = r * d;
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = g[base + j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[base + j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = g[base + j] * gv[j];
                            dx[base + j] = is * (dh - mean_dh - xhat[base + j] * mean_dh_h);
                        }
                    }
                    self.accumulate(*x, dx);
                }
                self.accumulate_with(*gain, |dg| {
                    for (row, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += row[j] * hrow[j];
                        }
                    }
                });
                self.accumulate_with(*shift, |ds| {
                    for row in g.chunks(d) {
                        ds.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                });
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = g[0] / b as f64;
                let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &label) in labels.iter().enumerate() {
                    dl[r * k + label] -= scale;
                }
                self.accumulate(*logits, dl);
            }
        }
        self.nodes[i].op = op;
    }
}

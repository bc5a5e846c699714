//! Reverse-mode differentiation over a recorded forward tape.
//!
//! Every operation computes its value eagerly and appends a node; calling
//! [`Tape::backward`] walks the nodes in reverse and accumulates (`+=`)
//! partial derivatives, so a parameter read at several time steps sums all
//! of its contributions.

use super::kernels;
use super::{GradSet, ParamId, ParamStore, RngStream, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    SumAxis0(Var),
    SumAxis1(Var),
    SumAll(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Row(Var, usize),
    Reshape(Var),
    MaxAxis0(Var, Vec<usize>),
    Unfold(Var, usize),
    Clamp(Var, f64, f64),
    Bce(Var, Vec<f64>),
    BceTerms(Var, Vec<f64>),
    PseudoHuber(Var, f64),
    CenterLoss {
        e: Var,
        centers: Var,
        labels: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Act(..) => "activation",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout(..) => "dropout",
            Op::SumAxis0(..) => "sum_axis0",
            Op::SumAxis1(..) => "sum_axis1",
            Op::SumAll(..) => "sum_all",
            Op::Concat(..) => "concat",
            Op::Stack(..) => "stack",
            Op::Row(..) => "row",
            Op::Reshape(..) => "reshape",
            Op::MaxAxis0(..) => "max_axis0",
            Op::Unfold(..) => "unfold",
            Op::Clamp(..) => "clamp",
            Op::Bce(..) => "bce",
            Op::BceTerms(..) => "bce_terms",
            Op::PseudoHuber(..) => "pseudo_huber",
            Op::CenterLoss { .. } => "center_loss",
        }
    }
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation for one example.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
    fault: Option<&'static str>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            bound: vec![None; params.len()],
            fault: None,
        }
    }

    /// Tape with no parameter store, for parameter-free computations.
    pub fn detached() -> Tape<'static> {
        Tape {
            params: None,
            nodes: Vec::new(),
            bound: Vec::new(),
            fault: None,
        }
    }

    /// Flip the sign of one operation's backward rule. Exists so the
    /// gradient checker can be shown to catch a broken derivative.
    #[doc(hidden)]
    pub fn inject_sign_flip(&mut self, op_name: &'static str) {
        self.fault = Some(op_name);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("param node without store").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).values()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives gradients (e.g. inputs under a gradient check).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.bound[id.0] = Some(v);
        v
    }

    /// `a · b`. A rank-1 `a` is a row vector and yields a rank-1 result;
    /// `b` is viewed as `[len/n, n]` with `n` its last extent.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let k = ta.cols();
        let m = ta.rows();
        let n = tb.cols();
        if tb.shape().len() < 2 || tb.rows() != k {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let out = kernels::mm(ta.values(), m, k, tb.values(), n);
        let shape = if ta.shape().len() == 1 { vec![n] } else { vec![m, n] };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` with `b` viewed as `[len/k, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let k = ta.cols();
        let m = ta.rows();
        if tb.cols() != k {
            return Err(Error::dim("matmul_nt", ta.shape(), tb.shape()));
        }
        let n = tb.rows();
        let out = kernels::mm_nt(ta.values(), m, k, tb.values(), n);
        let shape = if ta.shape().len() == 1 { vec![n] } else { vec![m, n] };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMulNt(a, b), ng))
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::dim(op, ta.shape(), tb.shape()));
        }
        Ok(())
    }

    /// Elementwise sum; the result takes `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    /// Adds rank-1 `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.cols();
        if tb.len() != n {
            return Err(Error::dim("add_row", ta.shape(), tb.shape()));
        }
        let bv = tb.values();
        let out: Vec<f64> = ta.values().iter().enumerate().map(|(i, x)| x + bv[i % n]).collect();
        let t = Tensor::new(ta.shape(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::AddRow(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let out = ta.values().iter().map(|x| x * s).collect();
        let t = Tensor::new(ta.shape(), out).expect("same shape");
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let tx = self.value(x);
        let out = tx.values().iter().map(|&v| kernels::activate(v, kind)).collect();
        let t = Tensor::new(tx.shape(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Act(x, kind), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let mut out = tx.values().to_vec();
        for row in out.chunks_mut(n) {
            kernels::softmax_in_place(row);
        }
        let t = Tensor::new(tx.shape(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Softmax(x), ng)
    }

    /// Layer normalization along the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let n = tx.cols();
        if n < 2 || tg.len() != n || tb.len() != n {
            return Err(Error::dim("layer_norm", tx.shape(), tg.shape()));
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (g, b) = (tg.values(), tb.values());
        let mut normed = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(tx.rows());
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.values().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mean) * inv;
                normed.push(xh);
                out.push(g[j] * xh + b[j]);
            }
        }
        let t = Tensor::new(tx.shape(), out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            ng,
        ))
    }

    /// Inverted dropout. Identity in eval mode or when `drop_prob == 0`.
    pub fn dropout(&mut self, x: Var, drop_prob: f64, mode: Mode, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&drop_prob) {
            return Err(Error::Config(format!("drop probability must be in [0,1), got {drop_prob}")));
        }
        if mode == Mode::Eval || drop_prob == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - drop_prob;
        let tx = self.value(x);
        let mask: Vec<f64> = (0..tx.len())
            .map(|_| if rng.uniform() < drop_prob { 0.0 } else { 1.0 / keep })
            .collect();
        let out = tx.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(tx.shape(), out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Dropout(x, mask), ng))
    }

    /// `[m, n] -> [n]`, summing rows.
    pub fn sum_axis0(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let mut out = vec![0.0; n];
        for row in tx.values().chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        let ng = self.ng(x);
        self.push(Tensor::vector(out), Op::SumAxis0(x), ng)
    }

    /// `[m, n] -> [m]`, summing columns.
    pub fn sum_axis1(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let out = tx.values().chunks(n).map(|r| r.iter().sum()).collect();
        let ng = self.ng(x);
        self.push(Tensor::vector(out), Op::SumAxis1(x), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::vector(vec![s]), Op::SumAll(x), ng)
    }

    /// Flattening concatenation into a rank-1 tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).values());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), ng)
    }

    /// Stack equal-length tensors as rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let n = rows.first().map(|&r| self.value(r).len()).unwrap_or(0);
        let mut out = Vec::with_capacity(n * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.len() != n {
                return Err(Error::dim("stack", &[n], t.shape()));
            }
            out.extend_from_slice(t.values());
        }
        let t = Tensor::new(&[rows.len(), n], out)?;
        let ng = rows.iter().any(|&r| self.ng(r));
        Ok(self.push(t, Op::Stack(rows.to_vec()), ng))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let tx = self.value(x);
        if i >= tx.rows() {
            return Err(Error::dim("row", tx.shape(), &[i]));
        }
        let t = Tensor::vector(tx.row(i).to_vec());
        let ng = self.ng(x);
        Ok(self.push(t, Op::Row(x, i), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// `[m, n] -> [n]`, column-wise maximum (first index wins ties).
    pub fn max_axis0(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let mut best = tx.row(0).to_vec();
        let mut arg = vec![0usize; n];
        for r in 1..tx.rows() {
            for (j, v) in tx.row(r).iter().enumerate() {
                if *v > best[j] {
                    best[j] = *v;
                    arg[j] = r;
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::vector(best), Op::MaxAxis0(x, arg), ng)
    }

    /// Sliding windows of `window` consecutive rows, each flattened:
    /// `[T, D] -> [T - window + 1, window * D]`.
    pub fn unfold(&mut self, x: Var, window: usize) -> Result<Var> {
        let tx = self.value(x);
        let (t, d) = (tx.rows(), tx.cols());
        if window == 0 || t < window {
            return Err(Error::InputTooShort { len: t, window });
        }
        let windows = t - window + 1;
        let mut out = Vec::with_capacity(windows * window * d);
        for s in 0..windows {
            out.extend_from_slice(&tx.values()[s * d..(s + window) * d]);
        }
        let tt = Tensor::new(&[windows, window * d], out)?;
        let ng = self.ng(x);
        Ok(self.push(tt, Op::Unfold(x, window), ng))
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let tx = self.value(x);
        let out = tx.values().iter().map(|v| v.clamp(lo, hi)).collect();
        let t = Tensor::new(tx.shape(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(t, Op::Clamp(x, lo, hi), ng)
    }

    /// Summed binary cross-entropy of probabilities `p` against 0/1 `targets`.
    pub fn bce(&mut self, p: Var, targets: Vec<f64>) -> Result<Var> {
        let tp = self.value(p);
        if tp.len() != targets.len() {
            return Err(Error::dim("bce", tp.shape(), &[targets.len()]));
        }
        let l = kernels::bce(tp.values(), &targets);
        let ng = self.ng(p);
        Ok(self.push(Tensor::vector(vec![l]), Op::Bce(p, targets), ng))
    }

    /// Per-class binary cross-entropy terms, unsummed.
    pub fn bce_terms(&mut self, p: Var, targets: Vec<f64>) -> Result<Var> {
        let tp = self.value(p);
        if tp.len() != targets.len() {
            return Err(Error::dim("bce_terms", tp.shape(), &[targets.len()]));
        }
        let out = tp
            .values()
            .iter()
            .zip(&targets)
            .map(|(p, y)| kernels::bce(&[*p], &[*y]))
            .collect();
        let ng = self.ng(p);
        Ok(self.push(Tensor::vector(out), Op::BceTerms(p, targets), ng))
    }

    /// Elementwise `δ²(√(1 + (x/δ)²) − 1)`.
    pub fn pseudo_huber(&mut self, x: Var, delta: f64) -> Result<Var> {
        if delta <= 0.0 || !delta.is_finite() {
            return Err(Error::Config(format!("pseudo-Huber delta must be positive, got {delta}")));
        }
        let tx = self.value(x);
        let out = tx.values().iter().map(|&v| kernels::pseudo_huber(v, delta)).collect();
        let t = Tensor::new(tx.shape(), out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::PseudoHuber(x, delta), ng))
    }

    /// Mean squared distance from embedding `e` to the rows of `centers`
    /// selected by `labels`.
    pub fn center_loss(&mut self, e: Var, centers: Var, labels: &[usize]) -> Result<Var> {
        let (te, tc) = (self.value(e), self.value(centers));
        let d = te.len();
        if tc.cols() != d {
            return Err(Error::dim("center_loss", te.shape(), tc.shape()));
        }
        if labels.is_empty() {
            return Err(Error::Data("center loss needs at least one label".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&k| k >= tc.rows()) {
            return Err(Error::Data(format!("label {bad} has no center")));
        }
        let mut total = 0.0;
        for &k in labels {
            total += te.values().iter().zip(tc.row(k)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let l = total / labels.len() as f64;
        let ng = self.ng(e) || self.ng(centers);
        Ok(self.push(
            Tensor::vector(vec![l]),
            Op::CenterLoss {
                e,
                centers,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep seeded with `d output = 1` (for a scalar output) or
    /// ones everywhere.
    pub fn backward(&self, output: Var) -> Gradients {
        let seed = vec![1.0; self.value(output).len()];
        self.backward_with(output, seed)
    }

    pub fn backward_with(&self, output: Var, seed: Vec<f64>) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut g) = grads[idx].take() else {
                continue;
            };
            if self.fault == Some(node.op.name()) {
                g.iter_mut().for_each(|v| *v = -*v);
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = match &node.value {
            Value::Owned(t) => t,
            Value::Param(_) => return,
        };
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.ng(*a) {
                    acc(grads, *a, kernels::mm_nt(g, m, n, tb.values(), k));
                }
                if self.ng(*b) {
                    acc(grads, *b, kernels::mm_tn(ta.values(), m, k, g, n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if self.ng(*a) {
                    acc(grads, *a, kernels::mm(g, m, n, tb.values(), k));
                }
                if self.ng(*b) {
                    acc(grads, *b, kernels::mm_tn(g, m, n, ta.values(), k));
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, g.to_vec());
            }
            Op::AddRow(a, b) => {
                acc(grads, *a, g.to_vec());
                if self.ng(*b) {
                    let n = self.value(*b).len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                    acc(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                if self.ng(*a) {
                    acc(grads, *a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if self.ng(*b) {
                    acc(grads, *b, g.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, s) => acc(grads, *a, g.iter().map(|v| v * s).collect()),
            Op::Act(x, kind) => {
                let xv = self.value(*x).values();
                let yv = out.values();
                let d = g
                    .iter()
                    .zip(xv.iter().zip(yv))
                    .map(|(g, (&x, &y))| g * kernels::activation_grad(x, y, *kind))
                    .collect();
                acc(grads, *x, d);
            }
            Op::Softmax(x) => {
                let n = out.cols();
                let mut d = Vec::with_capacity(g.len());
                for (y, gr) in out.values().chunks(n).zip(g.chunks(n)) {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(y.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                }
                acc(grads, *x, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let n = out.cols();
                let gv = self.value(*gain).values();
                if self.ng(*gain) {
                    let mut dg = vec![0.0; n];
                    for (xh, gr) in normed.chunks(n).zip(g.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * xh[j];
                        }
                    }
                    acc(grads, *gain, dg);
                }
                if self.ng(*bias) {
                    let mut db = vec![0.0; n];
                    for gr in g.chunks(n) {
                        db.iter_mut().zip(gr).for_each(|(o, v)| *o += v);
                    }
                    acc(grads, *bias, db);
                }
                if self.ng(*x) {
                    let mut dx = Vec::with_capacity(g.len());
                    for ((xh, gr), inv) in normed.chunks(n).zip(g.chunks(n)).zip(inv_std) {
                        let dxh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_d = dxh.iter().sum::<f64>() / n as f64;
                        let mean_dx = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        dx.extend(
                            dxh.iter()
                                .zip(xh)
                                .map(|(d, xh)| inv * (d - mean_d - xh * mean_dx)),
                        );
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::Dropout(x, mask) => acc(grads, *x, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::SumAxis0(x) => {
                let rows = self.value(*x).rows();
                let mut d = Vec::with_capacity(rows * g.len());
                for _ in 0..rows {
                    d.extend_from_slice(g);
                }
                acc(grads, *x, d);
            }
            Op::SumAxis1(x) => {
                let n = self.value(*x).cols();
                let d = g.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                acc(grads, *x, d);
            }
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                acc(grads, *x, vec![g[0]; n]);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(grads, p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::Stack(rows) => {
                let n = out.cols();
                for (i, &r) in rows.iter().enumerate() {
                    acc(grads, r, g[i * n..(i + 1) * n].to_vec());
                }
            }
            Op::Row(x, i) => {
                let tx = self.value(*x);
                let n = tx.cols();
                let mut d = vec![0.0; tx.len()];
                d[i * n..(i + 1) * n].copy_from_slice(g);
                acc(grads, *x, d);
            }
            Op::Reshape(x) => acc(grads, *x, g.to_vec()),
            Op::MaxAxis0(x, arg) => {
                let tx = self.value(*x);
                let n = tx.cols();
                let mut d = vec![0.0; tx.len()];
                for (j, &r) in arg.iter().enumerate() {
                    d[r * n + j] = g[j];
                }
                acc(grads, *x, d);
            }
            Op::Unfold(x, window) => {
                let tx = self.value(*x);
                let d = tx.cols();
                let width = window * d;
                let mut dx = vec![0.0; tx.len()];
                for (s, gr) in g.chunks(width).enumerate() {
                    dx[s * d..s * d + width].iter_mut().zip(gr).for_each(|(o, v)| *o += v);
                }
                acc(grads, *x, dx);
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).values();
                let d = g
                    .iter()
                    .zip(xv)
                    .map(|(g, v)| if *v >= *lo && *v <= *hi { *g } else { 0.0 })
                    .collect();
                acc(grads, *x, d);
            }
            Op::Bce(p, targets) => {
                let pv = self.value(*p).values();
                let d = pv
                    .iter()
                    .zip(targets)
                    .map(|(&p, &y)| g[0] * (-y / p + (1.0 - y) / (1.0 - p)))
                    .collect();
                acc(grads, *p, d);
            }
            Op::BceTerms(p, targets) => {
                let pv = self.value(*p).values();
                let d = pv
                    .iter()
                    .zip(targets)
                    .zip(g)
                    .map(|((&p, &y), g)| g * (-y / p + (1.0 - y) / (1.0 - p)))
                    .collect();
                acc(grads, *p, d);
            }
            Op::PseudoHuber(x, delta) => {
                let xv = self.value(*x).values();
                let d = g
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| g * kernels::pseudo_huber_grad(v, *delta))
                    .collect();
                acc(grads, *x, d);
            }
            Op::CenterLoss { e, centers, labels } => {
                let (te, tc) = (self.value(*e), self.value(*centers));
                let scale = 2.0 * g[0] / labels.len() as f64;
                if self.ng(*e) {
                    let mut de = vec![0.0; te.len()];
                    for &k in labels {
                        for (o, (a, b)) in de.iter_mut().zip(te.values().iter().zip(tc.row(k))) {
                            *o += scale * (a - b);
                        }
                    }
                    acc(grads, *e, de);
                }
                if self.ng(*centers) {
                    let d = te.len();
                    let mut dc = vec![0.0; tc.len()];
                    for &k in labels {
                        for (j, (a, b)) in te.values().iter().zip(tc.row(k)).enumerate() {
                            dc[k * d + j] -= scale * (a - b);
                        }
                    }
                    acc(grads, *centers, dc);
                }
            }
        }
    }

    /// Add every bound parameter's adjoint into `out`.
    pub fn collect_param_grads(&self, grads: &Gradients, out: &mut GradSet) {
        for (pid, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads.wrt(*v) {
                    out.add(ParamId(pid), g);
                }
            }
        }
    }
}

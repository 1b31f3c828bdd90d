use std::collections::BTreeMap;

use super::kernels;
use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive kinds recorded on the tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddRow,
    Mul,
    Scale,
    Softmax,
    LayerNorm,
    Gelu,
    Relu,
    MeanAxis,
    Sum,
    ConcatRows,
    ConcatCols,
    SliceRows,
    Gather,
    CrossEntropy,
    BinaryCrossEntropy,
    Attention,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Relu(Var),
    MeanAxis(Var, usize),
    Sum(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Var,
        probs: Vec<f64>,
    },
    BinaryCrossEntropy {
        logits: Var,
        targets: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        lse: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Softmax(_) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gelu(_) => OpKind::Gelu,
            Op::Relu(_) => OpKind::Relu,
            Op::MeanAxis(..) => OpKind::MeanAxis,
            Op::Sum(_) => OpKind::Sum,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::Gather(..) => OpKind::Gather,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::BinaryCrossEntropy { .. } => OpKind::BinaryCrossEntropy,
            Op::Attention { .. } => OpKind::Attention,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Softmax(x)
            | Op::Gelu(x)
            | Op::Relu(x)
            | Op::MeanAxis(x, _)
            | Op::Sum(x)
            | Op::SliceRows(x, _)
            | Op::Gather(x, _) => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.clone(),
            Op::CrossEntropy {
                logits, targets, ..
            }
            | Op::BinaryCrossEntropy { logits, targets } => vec![*logits, *targets],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Ordered record of primitive applications. Node ids are assigned in
/// creation order, so every input precedes its consumer.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros when `v` has no path to the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn for_params(&self, vars: &BTreeMap<String, Var>) -> ParamSet {
        vars.iter()
            .map(|(name, &v)| (name.clone(), self.wrt(v)))
            .collect()
    }
}

fn check2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::shape(op, format!("expected 2-D input, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input: never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    pub fn params(&mut self, set: &ParamSet) -> BTreeMap<String, Var> {
        set.iter()
            .map(|(name, t)| (name.clone(), self.param(t.clone())))
            .collect()
    }

    pub fn constants(&mut self, set: &ParamSet) -> BTreeMap<String, Var> {
        set.iter()
            .map(|(name, t)| (name.clone(), self.constant(t.clone())))
            .collect()
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        let inputs = op.inputs();
        if !value.all_finite() {
            let stats = inputs
                .iter()
                .map(|v| format!("input #{}: {}", v.0, self.value(*v).stats()))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::NonFinite { op: name, stats });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check2("matmul", self.value(a))?;
        let (k2, n) = check2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::new(vec![m, n], c)?, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", out, Op::Add(a, b))
    }

    /// `x[n, d] + b[d]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let d = tx.cols();
        if tb.len() != d {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", tx.shape(), tb.shape()),
            ));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            for (v, bias) in row.iter_mut().zip(tb.data()) {
                *v += bias;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_row", out, Op::AddRow(x, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", format!("{:?} * {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect())?;
        self.push("scale", out, Op::Scale(x, c))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("softmax", out, Op::Softmax(x))
    }

    /// Layer normalization over the last axis with gain and bias of length `d`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.cols();
        if tg.len() != d || tb.len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", tx.shape(), tg.shape(), tb.shape()),
            ));
        }
        let rows = tx.len() / d.max(1);
        let mut normed = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for c in 0..d {
                let nv = (row[c] - mean) * s;
                normed[r * d + c] = nv;
                out[r * d + c] = nv * tg.data()[c] + tb.data()[c];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                rstd,
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| gelu(v)).collect())?;
        self.push("gelu", out, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v.max(0.0)).collect())?;
        self.push("relu", out, Op::Relu(x))
    }

    /// Mean of a 2-D tensor over `axis` (0: rows, 1: columns), keeping the axis.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (n, d) = check2("mean_axis", self.value(x))?;
        let t = self.value(x);
        let out = match axis {
            0 => {
                let mut acc = vec![0.0; d];
                for row in t.data().chunks_exact(d) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n as f64);
                Tensor::new(vec![1, d], acc)?
            }
            1 => {
                let acc = t
                    .data()
                    .chunks_exact(d)
                    .map(|row| row.iter().sum::<f64>() / d as f64)
                    .collect();
                Tensor::new(vec![n, 1], acc)?
            }
            _ => return Err(Error::shape("mean_axis", format!("axis {axis} of 2-D tensor"))),
        };
        self.push("mean_axis", out, Op::MeanAxis(x, axis))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let d = check2("concat_rows", self.value(*first))?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let (n, dx) = check2("concat_rows", self.value(x))?;
            if dx != d {
                return Err(Error::shape("concat_rows", format!("column counts {d} vs {dx}")));
            }
            rows += n;
            data.extend_from_slice(self.value(x).data());
        }
        self.push(
            "concat_rows",
            Tensor::new(vec![rows, d], data)?,
            Op::ConcatRows(xs.to_vec()),
        )
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let n = check2("concat_cols", self.value(*first))?.0;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (nx, dx) = check2("concat_cols", self.value(x))?;
            if nx != n {
                return Err(Error::shape("concat_cols", format!("row counts {n} vs {nx}")));
            }
            widths.push(dx);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(r));
            }
        }
        self.push(
            "concat_cols",
            Tensor::new(vec![n, total], data)?,
            Op::ConcatCols(xs.to_vec()),
        )
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = check2("slice_rows", self.value(x))?;
        if start > end || end > n {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {n} rows")));
        }
        let data = self.value(x).data()[start * d..end * d].to_vec();
        self.push(
            "slice_rows",
            Tensor::new(vec![end - start, d], data)?,
            Op::SliceRows(x, start),
        )
    }

    /// Embedding lookup: rows of a 2-D table selected by index (repeats allowed).
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (n, d) = check2("gather", self.value(table))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather", format!("index {bad} into {n} rows")));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        self.push(
            "gather",
            Tensor::new(vec![indices.len(), d], data)?,
            Op::Gather(table, indices.to_vec()),
        )
    }

    /// Mean over rows of `-Σ_c targets·log softmax(logits)`. Targets may be soft.
    pub fn cross_entropy(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let (b, c) = check2("cross_entropy", self.value(logits))?;
        if self.value(targets).shape() != [b, c] {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits [{b},{c}] vs targets {:?}", self.value(targets).shape()),
            ));
        }
        let (tl, tt) = (self.value(logits), self.value(targets));
        let mut logp = vec![0.0; b * c];
        let mut loss = 0.0;
        for r in 0..b {
            log_softmax_row(tl.row(r), &mut logp[r * c..(r + 1) * c]);
            loss -= tt
                .row(r)
                .iter()
                .zip(&logp[r * c..(r + 1) * c])
                .map(|(t, lp)| t * lp)
                .sum::<f64>();
        }
        let probs = logp.iter().map(|v| v.exp()).collect();
        self.push(
            "cross_entropy",
            Tensor::scalar(loss / b as f64),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
        )
    }

    /// Mean over all entries of the logistic loss.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let (tl, tt) = (self.value(logits), self.value(targets));
        if tl.shape() != tt.shape() {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!("logits {:?} vs targets {:?}", tl.shape(), tt.shape()),
            ));
        }
        let loss = tl
            .data()
            .iter()
            .zip(tt.data())
            .map(|(&l, &t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
            .sum::<f64>()
            / tl.len() as f64;
        self.push(
            "binary_cross_entropy",
            Tensor::scalar(loss),
            Op::BinaryCrossEntropy { logits, targets },
        )
    }

    /// Multi-head scaled dot-product attention over `[n, d]` query/key/value
    /// projections; heads split the columns evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (n, d) = check2("attention", self.value(q))?;
        if self.value(k).shape() != [n, d] || self.value(v).shape() != [n, d] {
            return Err(Error::shape(
                "attention",
                format!(
                    "q {:?}, k {:?}, v {:?}",
                    self.value(q).shape(),
                    self.value(k).shape(),
                    self.value(v).shape()
                ),
            ));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("d={d} with {heads} heads")));
        }
        let fwd = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            n,
            d,
            heads,
        );
        self.push(
            "attention",
            Tensor::new(vec![n, d], fwd.out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                lse: fwd.lse,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`; each node is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let shaped = |v: Var, data: Vec<f64>| Tensor::new(self.value(v).shape().to_vec(), data);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if needs(a) {
                    let da = kernels::matmul_nt(g.data(), self.value(*b).data(), m, n, k);
                    accumulate(&mut grads[a.0], shaped(*a, da)?);
                }
                if needs(b) {
                    let db = kernels::matmul_tn(self.value(*a).data(), g.data(), m, k, n);
                    accumulate(&mut grads[b.0], shaped(*b, db)?);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        accumulate(&mut grads[v.0], g.clone());
                    }
                }
            }
            Op::AddRow(x, b) => {
                if needs(x) {
                    accumulate(&mut grads[x.0], g.clone());
                }
                if needs(b) {
                    let d = g.cols();
                    let mut db = vec![0.0; d];
                    for row in g.data().chunks_exact(d) {
                        for (a, v) in db.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    accumulate(&mut grads[b.0], shaped(*b, db)?);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if needs(a) {
                    let da = g.data().iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads[a.0], shaped(*a, da)?);
                }
                if needs(b) {
                    let db = g.data().iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads[b.0], shaped(*b, db)?);
                }
            }
            Op::Scale(x, c) => {
                if needs(x) {
                    let dx = g.data().iter().map(|v| v * c).collect();
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
            }
            Op::Softmax(x) => {
                if needs(x) {
                    let y = &node.value;
                    let d = y.cols();
                    let mut dx = vec![0.0; y.len()];
                    for ((dxr, yr), gr) in dx
                        .chunks_exact_mut(d)
                        .zip(y.data().chunks_exact(d))
                        .zip(g.data().chunks_exact(d))
                    {
                        let s = kernels::dot(yr, gr);
                        for c in 0..d {
                            dxr[c] = yr[c] * (gr[c] - s);
                        }
                    }
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                rstd,
            } => {
                let d = g.cols();
                let tg = self.value(*gamma);
                if needs(gamma) || needs(beta) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for (gr, nr) in g.data().chunks_exact(d).zip(normed.chunks_exact(d)) {
                        for c in 0..d {
                            dg[c] += gr[c] * nr[c];
                            db[c] += gr[c];
                        }
                    }
                    if needs(gamma) {
                        accumulate(&mut grads[gamma.0], shaped(*gamma, dg)?);
                    }
                    if needs(beta) {
                        accumulate(&mut grads[beta.0], shaped(*beta, db)?);
                    }
                }
                if needs(x) {
                    let mut dx = vec![0.0; g.len()];
                    let mut gh = vec![0.0; d];
                    for (r, ((dxr, gr), nr)) in dx
                        .chunks_exact_mut(d)
                        .zip(g.data().chunks_exact(d))
                        .zip(normed.chunks_exact(d))
                        .enumerate()
                    {
                        for c in 0..d {
                            gh[c] = gr[c] * tg.data()[c];
                        }
                        let mean_g = gh.iter().sum::<f64>() / d as f64;
                        let mean_gn = kernels::dot(&gh, nr) / d as f64;
                        for c in 0..d {
                            dxr[c] = rstd[r] * (gh[c] - mean_g - nr[c] * mean_gn);
                        }
                    }
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
            }
            Op::Gelu(x) => {
                if needs(x) {
                    let tx = self.value(*x);
                    let dx = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(g, &v)| g * gelu_grad(v))
                        .collect();
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
            }
            Op::Relu(x) => {
                if needs(x) {
                    let tx = self.value(*x);
                    let dx = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
            }
            Op::MeanAxis(x, axis) => {
                if needs(x) {
                    let tx = self.value(*x);
                    let (n, d) = (tx.rows(), tx.cols());
                    let mut dx = vec![0.0; n * d];
                    for r in 0..n {
                        for c in 0..d {
                            dx[r * d + c] = if *axis == 0 {
                                g.data()[c] / n as f64
                            } else {
                                g.data()[r] / d as f64
                            };
                        }
                    }
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
            }
            Op::Sum(x) => {
                if needs(x) {
                    let tx = self.value(*x);
                    accumulate(&mut grads[x.0], Tensor::full(tx.shape(), g.item()));
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for x in xs {
                    let len = self.value(*x).len();
                    if needs(x) {
                        let dx = g.data()[offset..offset + len].to_vec();
                        accumulate(&mut grads[x.0], shaped(*x, dx)?);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(xs) => {
                let total = g.cols();
                let mut col = 0;
                for x in xs {
                    let (n, d) = (self.value(*x).rows(), self.value(*x).cols());
                    if needs(x) {
                        let mut dx = Vec::with_capacity(n * d);
                        for r in 0..n {
                            dx.extend_from_slice(&g.data()[r * total + col..r * total + col + d]);
                        }
                        accumulate(&mut grads[x.0], shaped(*x, dx)?);
                    }
                    col += d;
                }
            }
            Op::SliceRows(x, start) => {
                if needs(x) {
                    let tx = self.value(*x);
                    let d = tx.cols();
                    let mut dx = vec![0.0; tx.len()];
                    dx[start * d..start * d + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads[x.0], shaped(*x, dx)?);
                }
            }
            Op::Gather(table, indices) => {
                if needs(table) {
                    let tt = self.value(*table);
                    let d = tt.cols();
                    let mut dt = vec![0.0; tt.len()];
                    for (r, &i) in indices.iter().enumerate() {
                        kernels::axpy(1.0, &g.data()[r * d..(r + 1) * d], &mut dt[i * d..(i + 1) * d]);
                    }
                    accumulate(&mut grads[table.0], shaped(*table, dt)?);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if needs(logits) {
                    let tt = self.value(*targets);
                    let (b, c) = (tt.rows(), tt.cols());
                    let scale = g.item() / b as f64;
                    let mut dl = vec![0.0; b * c];
                    for r in 0..b {
                        let tr = tt.row(r);
                        let mass: f64 = tr.iter().sum();
                        for j in 0..c {
                            dl[r * c + j] = scale * (mass * probs[r * c + j] - tr[j]);
                        }
                    }
                    accumulate(&mut grads[logits.0], shaped(*logits, dl)?);
                }
            }
            Op::BinaryCrossEntropy { logits, targets } => {
                if needs(logits) {
                    let (tl, tt) = (self.value(*logits), self.value(*targets));
                    let scale = g.item() / tl.len() as f64;
                    let dl = tl
                        .data()
                        .iter()
                        .zip(tt.data())
                        .map(|(&l, &t)| scale * (1.0 / (1.0 + (-l).exp()) - t))
                        .collect();
                    accumulate(&mut grads[logits.0], shaped(*logits, dl)?);
                }
            }
            Op::Attention { q, k, v, heads, lse } => {
                let (n, d) = (g.rows(), g.cols());
                let ag = kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    node.value.data(),
                    lse,
                    g.data(),
                    n,
                    d,
                    *heads,
                );
                for (var, dx) in [(q, ag.dq), (k, ag.dk), (v, ag.dv)] {
                    if needs(var) {
                        accumulate(&mut grads[var.0], shaped(*var, dx)?);
                    }
                }
            }
        }
        Ok(())
    }
}

//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value and the [`Var`] handles of its inputs. Nodes are appended
//! in evaluation order, so walking the tape backwards is a valid topological
//! order and each operation's backward rule runs exactly once.
//!
//! The tape also accounts for the scalars it keeps alive (node outputs plus
//! any saved activations, and gradient buffers during backward). The peak of
//! that count is what the memory benchmark reports.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{dim_err, Error, Result};
use crate::kernels::{axis_extents, gemm, softmax};
use crate::param::{Gradients, ParamId, ParamStore};
use crate::sparse::SparseMatrix;
use crate::tensor::Tensor;
use crate::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Live and peak counts of `f64` scalars held by a tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemoryStats {
    pub live: usize,
    pub peak: usize,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, bias: Var },
    MulCol { x: Var, gate: Var },
    Scale(Var, f64),
    MulConst(Var, Rc<[f64]>),
    Relu(Var),
    Tanh(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    RepeatRows { x: Var, times: usize },
    GatherRows { x: Var, index: Rc<[usize]> },
    ScatterRows { x: Var, index: Rc<[usize]> },
    Segment { x: Var, ids: Rc<[usize]>, scale: Vec<f64> },
    Propagate { x: Var, op: Rc<SparseMatrix> },
    Unit { x: Var, norm: f64 },
    CrossEntropy { logits: Var, labels: Rc<[usize]>, probs: Vec<f64> },
    Mse { a: Var, b: Var },
}

impl Op {
    fn aux_len(&self) -> usize {
        match self {
            Op::LayerNorm { xhat, rstd, .. } => xhat.len() + rstd.len(),
            Op::CrossEntropy { probs, .. } => probs.len(),
            _ => 0,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    meter: MemoryStats,
}

fn need_rank2(op: &'static str, t: &Tensor) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::InvalidInput(alloc::format!(
            "{op} expects a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
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

    pub fn memory(&self) -> MemoryStats {
        self.meter
    }

    /// Restarts peak tracking from the current live count.
    pub fn reset_peak(&mut self) {
        self.meter.peak = self.meter.live;
    }

    /// Drops every node, returning the live count to zero.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.meter.live = 0;
    }

    fn alloc(&mut self, n: usize) {
        self.meter.live += n;
        self.meter.peak = self.meter.peak.max(self.meter.live);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.alloc(value.numel() + op.aux_len());
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let op_name = if trans_b { "matmul_nt" } else { "matmul" };
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(dim_err(op_name, ta.shape(), tb.shape()));
        }
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = if trans_b {
            (tb.cols(), tb.rows())
        } else {
            (tb.rows(), tb.cols())
        };
        if k != k2 {
            return Err(dim_err(op_name, ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), trans_b, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul { a, b, trans_b }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        need_rank2("transpose", self.value(a))?;
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        Ok(self.push(v, Op::Transpose(a), rg))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Adds a length-`c` vector to every row of an `n x c` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        need_rank2("add_row", tx)?;
        let c = tx.cols();
        if tb.numel() != c {
            return Err(dim_err("add_row", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let v = Tensor::matrix(tx.rows(), c, data);
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(v, Op::AddRow { x, bias }, rg))
    }

    /// Multiplies row `i` of `x` by `gate[i]`.
    pub fn mul_col(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(gate));
        need_rank2("mul_col", tx)?;
        if tg.numel() != tx.rows() {
            return Err(dim_err("mul_col", tx.shape(), tg.shape()));
        }
        let c = tx.cols();
        let mut data = tx.data().to_vec();
        for (row, s) in data.chunks_mut(c.max(1)).zip(tg.data()) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        let v = Tensor::matrix(tx.rows(), c, data);
        let rg = self.rg(x) || self.rg(gate);
        Ok(self.push(v, Op::MulCol { x, gate }, rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape(), t.data().iter().map(|v| v * s).collect()).unwrap();
        let rg = self.rg(x);
        self.push(v, Op::Scale(x, s), rg)
    }

    /// Elementwise product with a constant array (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Rc<[f64]>) -> Result<Var> {
        let t = self.value(x);
        if c.len() != t.numel() {
            return Err(dim_err("mul_const", t.shape(), &[c.len()]));
        }
        let v = Tensor::new(t.shape(), t.data().iter().zip(c.iter()).map(|(a, b)| a * b).collect())?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::MulConst(x, c), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape(), t.data().iter().map(|v| v.max(0.0)).collect()).unwrap();
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape(), t.data().iter().map(|v| libm::tanh(*v)).collect()).unwrap();
        let rg = self.rg(x);
        self.push(v, Op::Tanh(x), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::InvalidInput(alloc::format!(
                "softmax axis {axis} out of range for shape {:?}",
                t.shape()
            )));
        }
        let v = Tensor::new(t.shape(), softmax(t.data(), t.shape(), axis))?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Softmax { x, axis }, rg))
    }

    /// Row-wise layer normalization followed by the affine map `gamma, beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        need_rank2("layer_norm", t)?;
        let (n, d) = (t.rows(), t.cols());
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.numel() != d || tb.numel() != d {
            return Err(dim_err("layer_norm", t.shape(), tg.shape()));
        }
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / libm::sqrt(var + eps);
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::matrix(n, d, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        need_rank2("slice_rows", t)?;
        if start > end || end > t.rows() {
            return Err(Error::InvalidInput(alloc::format!(
                "row range {start}..{end} out of bounds for {:?}",
                t.shape()
            )));
        }
        let v = t.slice_rows(start, end);
        let rg = self.rg(x);
        Ok(self.push(v, Op::SliceRows { x, start }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.value(x);
        need_rank2("slice_cols", t)?;
        let c = t.cols();
        if start + width > c {
            return Err(Error::InvalidInput(alloc::format!(
                "column range {start}..{} out of bounds for {:?}",
                start + width,
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(t.rows() * width);
        for i in 0..t.rows() {
            data.extend_from_slice(&t.row(i)[start..start + width]);
        }
        let v = Tensor::matrix(t.rows(), width, data);
        let rg = self.rg(x);
        Ok(self.push(v, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::InvalidInput("concat_rows of nothing".into()))?;
        let c = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let t = self.value(x);
            need_rank2("concat_rows", t)?;
            if t.cols() != c {
                return Err(dim_err("concat_rows", self.shape(first), t.shape()));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::matrix(rows, c, data), Op::ConcatRows(xs.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::InvalidInput("concat_cols of nothing".into()))?;
        let n = self.value(first).rows();
        let mut total = 0;
        for &x in xs {
            let t = self.value(x);
            need_rank2("concat_cols", t)?;
            if t.rows() != n {
                return Err(dim_err("concat_cols", self.shape(first), t.shape()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(i));
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::matrix(n, total, data), Op::ConcatCols(xs.to_vec()), rg))
    }

    /// Stacks `times` copies of `x` vertically.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let t = self.value(x);
        need_rank2("repeat_rows", t)?;
        let mut data = Vec::with_capacity(t.numel() * times);
        for _ in 0..times {
            data.extend_from_slice(t.data());
        }
        let v = Tensor::matrix(t.rows() * times, t.cols(), data);
        let rg = self.rg(x);
        Ok(self.push(v, Op::RepeatRows { x, times }, rg))
    }

    pub fn gather_rows(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var> {
        let t = self.value(x);
        need_rank2("gather_rows", t)?;
        let mut data = Vec::with_capacity(index.len() * t.cols());
        for &i in index.iter() {
            if i >= t.rows() {
                return Err(Error::InvalidInput(alloc::format!("gather index {i} out of range")));
            }
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::matrix(index.len(), t.cols(), data);
        let rg = self.rg(x);
        Ok(self.push(v, Op::GatherRows { x, index }, rg))
    }

    /// Places row `i` of `x` at row `index[i]` of an `n x c` zero matrix.
    pub fn scatter_rows(&mut self, x: Var, index: Rc<[usize]>, n: usize) -> Result<Var> {
        let t = self.value(x);
        need_rank2("scatter_rows", t)?;
        if index.len() != t.rows() {
            return Err(dim_err("scatter_rows", t.shape(), &[index.len()]));
        }
        let c = t.cols();
        let mut data = vec![0.0; n * c];
        for (r, &i) in index.iter().enumerate() {
            if i >= n {
                return Err(Error::InvalidInput(alloc::format!("scatter index {i} out of range")));
            }
            for (o, v) in data[i * c..(i + 1) * c].iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(n, c, data), Op::ScatterRows { x, index }, rg))
    }

    /// Per-segment row sums (`mean = false`) or means (`mean = true`).
    pub fn segment_reduce(&mut self, x: Var, ids: Rc<[usize]>, segments: usize, mean: bool) -> Result<Var> {
        let t = self.value(x);
        need_rank2("segment_reduce", t)?;
        if ids.len() != t.rows() {
            return Err(dim_err("segment_reduce", t.shape(), &[ids.len()]));
        }
        let c = t.cols();
        let mut counts = vec![0usize; segments];
        for &s in ids.iter() {
            if s >= segments {
                return Err(Error::InvalidInput(alloc::format!("segment id {s} >= {segments}")));
            }
            counts[s] += 1;
        }
        let scale: Vec<f64> = counts
            .iter()
            .map(|&k| if mean && k > 0 { 1.0 / k as f64 } else { 1.0 })
            .collect();
        let mut data = vec![0.0; segments * c];
        for (r, &s) in ids.iter().enumerate() {
            for (o, v) in data[s * c..(s + 1) * c].iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        for (s, row) in data.chunks_mut(c.max(1)).enumerate() {
            row.iter_mut().for_each(|v| *v *= scale[s]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(segments, c, data), Op::Segment { x, ids, scale }, rg))
    }

    /// Sparse-dense product `op * x`.
    pub fn propagate(&mut self, x: Var, op: Rc<SparseMatrix>) -> Result<Var> {
        let t = self.value(x);
        need_rank2("propagate", t)?;
        if op.n() != t.rows() {
            return Err(dim_err("propagate", &[op.n(), op.n()], t.shape()));
        }
        let c = t.cols();
        let mut out = vec![0.0; t.numel()];
        op.apply_add(t.data(), c, &mut out);
        let v = Tensor::matrix(t.rows(), c, out);
        let rg = self.rg(x);
        Ok(self.push(v, Op::Propagate { x, op }, rg))
    }

    /// `x / ||x||`.
    pub fn unit(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let norm = libm::sqrt(t.data().iter().map(|v| v * v).sum());
        if norm == 0.0 {
            return Err(Error::InvalidInput("cannot normalize a zero vector".into()));
        }
        let v = Tensor::new(t.shape(), t.data().iter().map(|v| v / norm).collect())?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Unit { x, norm }, rg))
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Rc<[usize]>) -> Result<Var> {
        let t = self.value(logits);
        need_rank2("cross_entropy", t)?;
        let (n, c) = (t.rows(), t.cols());
        if labels.len() != n || n == 0 {
            return Err(dim_err("cross_entropy", t.shape(), &[labels.len()]));
        }
        let probs = softmax(t.data(), t.shape(), 1);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::InvalidInput(alloc::format!("label {y} >= {c} classes")));
            }
            // log-softmax directly, to stay finite for confident wrong answers
            let row = t.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            loss += lse - row[y];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy { logits, labels, probs },
            rg,
        ))
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err("mse", ta.shape(), tb.shape()));
        }
        let n = ta.numel().max(1) as f64;
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::Mse { a, b }, rg))
    }

    /// Back-propagates from a scalar `loss`, returning gradients for every
    /// parameter leaf it reaches.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        self.alloc(1);
        let mut out = Gradients::default();
        let mut live = 1usize;

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                live -= g.len();
                continue;
            }
            let mut sink = Sink {
                grads: &mut grads,
                nodes: &self.nodes,
                allocated: 0,
            };
            backprop(node, &g, &mut sink, &mut out);
            let allocated = sink.allocated;
            live += allocated;
            self.meter.live += allocated;
            self.meter.peak = self.meter.peak.max(self.meter.live);
            live -= g.len();
            self.meter.live -= g.len();
        }
        self.meter.live -= live;
        Ok(out)
    }
}

/// Gradient accumulator handed to each backward rule.
struct Sink<'a> {
    grads: &'a mut Vec<Option<Vec<f64>>>,
    nodes: &'a [Node],
    allocated: usize,
}

impl Sink<'_> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn buf(&mut self, v: Var) -> &mut Vec<f64> {
        let len = self.nodes[v.0].value.numel();
        let slot = &mut self.grads[v.0];
        if slot.is_none() {
            self.allocated += len;
            *slot = Some(vec![0.0; len]);
        }
        slot.as_mut().unwrap()
    }

    fn add(&mut self, v: Var, g: impl IntoIterator<Item = f64>) {
        if !self.wants(v) {
            return;
        }
        for (o, x) in self.buf(v).iter_mut().zip(g) {
            *o += x;
        }
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }
}

fn backprop(node: &Node, g: &[f64], s: &mut Sink<'_>, out: &mut Gradients) {
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Param(id) => {
            if out.grads.len() <= id.0 {
                out.grads.resize(id.0 + 1, None);
            }
            match &mut out.grads[id.0] {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g.to_vec()),
            }
        }
        &Op::MatMul { a, b, trans_b } => {
            let nodes: &[Node] = s.nodes;
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = (av.rows(), av.cols());
            let n = y.cols();
            if s.wants(a) {
                // trans_b: b is n x k and dA = G b; otherwise dA = G b^T
                gemm(m, n, k, g, false, bv.data(), !trans_b, s.buf(a), 1.0);
            }
            if s.wants(b) {
                if trans_b {
                    gemm(n, m, k, g, true, av.data(), false, s.buf(b), 1.0);
                } else {
                    gemm(k, m, n, av.data(), true, g, false, s.buf(b), 1.0);
                }
            }
        }
        &Op::Transpose(a) => {
            let (r, c) = (y.rows(), y.cols());
            // y is r x c, a is c x r
            let mut t = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    t[j * r + i] = g[i * c + j];
                }
            }
            s.add(a, t);
        }
        &Op::Add(a, b) => {
            s.add(a, g.iter().copied());
            s.add(b, g.iter().copied());
        }
        &Op::Sub(a, b) => {
            s.add(a, g.iter().copied());
            s.add(b, g.iter().map(|v| -v));
        }
        &Op::Mul(a, b) => {
            let bv: Vec<f64> = g.iter().zip(s.val(b).data()).map(|(g, b)| g * b).collect();
            let av: Vec<f64> = g.iter().zip(s.val(a).data()).map(|(g, a)| g * a).collect();
            s.add(a, bv);
            s.add(b, av);
        }
        &Op::AddRow { x, bias } => {
            s.add(x, g.iter().copied());
            if s.wants(bias) {
                let c = y.cols();
                let mut db = vec![0.0; c];
                for row in g.chunks(c.max(1)) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                s.add(bias, db);
            }
        }
        &Op::MulCol { x, gate } => {
            let c = y.cols();
            if s.wants(x) {
                let gv = s.val(gate).data();
                let dx: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * gv[i / c])
                    .collect();
                s.add(x, dx);
            }
            if s.wants(gate) {
                let xv = s.val(x).data();
                let dg: Vec<f64> = (0..y.rows())
                    .map(|i| (0..c).map(|j| g[i * c + j] * xv[i * c + j]).sum())
                    .collect();
                s.add(gate, dg);
            }
        }
        &Op::Scale(x, k) => s.add(x, g.iter().map(|v| v * k)),
        Op::MulConst(x, c) => s.add(*x, g.iter().zip(c.iter()).map(|(a, b)| a * b)),
        &Op::Relu(x) => s.add(
            x,
            g.iter()
                .zip(y.data())
                .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }),
        ),
        &Op::Tanh(x) => s.add(x, g.iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y))),
        &Op::Softmax { x, axis } => {
            let (outer, len, inner) = axis_extents(y.shape(), axis);
            let yv = y.data();
            let mut dx = vec![0.0; yv.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: f64 = (0..len).map(|j| g[base + j * inner] * yv[base + j * inner]).sum();
                    for j in 0..len {
                        let p = base + j * inner;
                        dx[p] = yv[p] * (g[p] - dot);
                    }
                }
            }
            s.add(x, dx);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let (n, d) = (y.rows(), y.cols());
            let gm = s.val(*gamma).data().to_vec();
            if s.wants(*x) {
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    let row = i * d..(i + 1) * d;
                    let dxh: Vec<f64> = g[row.clone()].iter().zip(&gm).map(|(g, w)| g * w).collect();
                    let sum: f64 = dxh.iter().sum();
                    let dot: f64 = dxh.iter().zip(&xhat[row.clone()]).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[i * d + j] =
                            rstd[i] / d as f64 * (d as f64 * dxh[j] - sum - xhat[i * d + j] * dot);
                    }
                }
                s.add(*x, dx);
            }
            if s.wants(*gamma) {
                let mut dg = vec![0.0; d];
                for (k, v) in g.iter().enumerate() {
                    dg[k % d] += v * xhat[k];
                }
                s.add(*gamma, dg);
            }
            if s.wants(*beta) {
                let mut db = vec![0.0; d];
                for (k, v) in g.iter().enumerate() {
                    db[k % d] += v;
                }
                s.add(*beta, db);
            }
        }
        &Op::Sum(x) => {
            let n = s.val(x).numel();
            s.add(x, core::iter::repeat_n(g[0], n));
        }
        &Op::Mean(x) => {
            let n = s.val(x).numel();
            s.add(x, core::iter::repeat_n(g[0] / n.max(1) as f64, n));
        }
        &Op::SliceRows { x, start } => {
            if s.wants(x) {
                let c = y.cols();
                let buf = s.buf(x);
                for (o, v) in buf[start * c..start * c + g.len()].iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        &Op::SliceCols { x, start } => {
            if s.wants(x) {
                let w = y.cols();
                let c = s.val(x).cols();
                let buf = s.buf(x);
                for i in 0..y.rows() {
                    for j in 0..w {
                        buf[i * c + start + j] += g[i * w + j];
                    }
                }
            }
        }
        Op::ConcatRows(xs) => {
            let mut off = 0;
            for &x in xs {
                let len = s.val(x).numel();
                s.add(x, g[off..off + len].iter().copied());
                off += len;
            }
        }
        Op::ConcatCols(xs) => {
            let total = y.cols();
            let mut off = 0;
            for &x in xs {
                let w = s.val(x).cols();
                if s.wants(x) {
                    let buf = s.buf(x);
                    for i in 0..y.rows() {
                        for j in 0..w {
                            buf[i * w + j] += g[i * total + off + j];
                        }
                    }
                }
                off += w;
            }
        }
        &Op::RepeatRows { x, times } => {
            if s.wants(x) {
                let len = s.val(x).numel();
                let buf = s.buf(x);
                for t in 0..times {
                    for (o, v) in buf.iter_mut().zip(&g[t * len..(t + 1) * len]) {
                        *o += v;
                    }
                }
            }
        }
        Op::GatherRows { x, index } => {
            if s.wants(*x) {
                let c = y.cols();
                let buf = s.buf(*x);
                for (r, &i) in index.iter().enumerate() {
                    for j in 0..c {
                        buf[i * c + j] += g[r * c + j];
                    }
                }
            }
        }
        Op::ScatterRows { x, index } => {
            if s.wants(*x) {
                let c = y.cols();
                let buf = s.buf(*x);
                for (r, &i) in index.iter().enumerate() {
                    for j in 0..c {
                        buf[r * c + j] += g[i * c + j];
                    }
                }
            }
        }
        Op::Segment { x, ids, scale } => {
            if s.wants(*x) {
                let c = y.cols();
                let buf = s.buf(*x);
                for (r, &seg) in ids.iter().enumerate() {
                    for j in 0..c {
                        buf[r * c + j] += g[seg * c + j] * scale[seg];
                    }
                }
            }
        }
        Op::Propagate { x, op } => {
            if s.wants(*x) {
                let c = y.cols();
                let buf = s.buf(*x);
                op.apply_transpose_add(g, c, buf);
            }
        }
        &Op::Unit { x, norm } => {
            let dot: f64 = g.iter().zip(y.data()).map(|(a, b)| a * b).sum();
            s.add(
                x,
                g.iter().zip(y.data()).map(|(g, u)| (g - u * dot) / norm),
            );
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let c = s.val(*logits).cols();
            let n = labels.len() as f64;
            let mut d = probs.clone();
            for (i, &lab) in labels.iter().enumerate() {
                d[i * c + lab] -= 1.0;
            }
            s.add(*logits, d.into_iter().map(|v| v * g[0] / n));
        }
        &Op::Mse { a, b } => {
            let n = s.val(a).numel().max(1) as f64;
            let diff: Vec<f64> = s
                .val(a)
                .data()
                .iter()
                .zip(s.val(b).data())
                .map(|(x, y)| 2.0 * (x - y) / n * g[0])
                .collect();
            s.add(b, diff.iter().map(|v| -v));
            s.add(a, diff);
        }
    }
}

/// One forward pass: a fresh tape, read-only parameters and, in training
/// mode, the generator that draws dropout masks.
pub struct Ctx<'a> {
    pub tape: Tape,
    params: &'a ParamStore,
    rng: Option<&'a mut Rng>,
    bound: Vec<Option<Var>>,
}

impl<'a> Ctx<'a> {
    pub fn eval(params: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params,
            rng: None,
            bound: vec![None; params.len()],
        }
    }

    pub fn train(params: &'a ParamStore, rng: &'a mut Rng) -> Self {
        Self {
            rng: Some(rng),
            ..Self::eval(params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    /// Binds a parameter onto the tape (once per pass).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.param(id, self.params.value(id));
        self.bound[id.0] = Some(v);
        v
    }

    /// Inverted dropout; the identity outside training mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Parameter(alloc::format!("dropout rate {rate} must be < 1")));
        }
        let keep = 1.0 - rate;
        let n = self.tape.value(x).numel();
        let mask: Rc<[f64]> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.tape.mul_const(x, mask)
    }

    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.tape.backward(loss)
    }
}

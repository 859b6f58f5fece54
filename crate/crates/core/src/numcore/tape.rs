//! Reverse-mode differentiation over a linear record of primitive ops.
//!
//! Every op computes its value eagerly when recorded, so node ids are already
//! in topological order and the backward pass is a single reverse sweep.

use std::borrow::Cow;

use super::kernels::{self, gemm, Operand};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Incoming neighbor lists in compressed form. Edge `e` of target `i` lies in
/// `offsets[i]..offsets[i + 1]` and reads from node `sources[e]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl NeighborIndex {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut sources = Vec::new();
        offsets.push(0);
        for l in lists {
            sources.extend_from_slice(l);
            offsets.push(sources.len());
        }
        Self { offsets, sources }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.sources.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.sources[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn segment(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    fn max_source(&self) -> Option<usize> {
        self.sources.iter().copied().max()
    }
}

enum Op<'a> {
    Leaf,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Powf(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    RowSoftmax(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize },
    SliceRows { x: NodeId, start: usize },
    SumAll(NodeId),
    ColumnSums(NodeId),
    EdgeScores { q: NodeId, k: NodeId, index: &'a NeighborIndex, scale: f64 },
    SegmentSoftmax { x: NodeId, index: &'a NeighborIndex },
    EdgeAggregate { weights: NodeId, values: NodeId, index: &'a NeighborIndex },
}

struct Node<'a> {
    op: Op<'a>,
    value: Cow<'a, Tensor>,
}

/// Record of primitive operations. Leaves may borrow their tensors so model
/// parameters are shared across tapes without copying.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros shaped like `like` when the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<'a>, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value: Cow::Owned(value) });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn leaf_ref(&mut self, value: &'a Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value: Cow::Borrowed(value) });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, ka) = if ta { (va.cols(), va.rows()) } else { (va.rows(), va.cols()) };
        let (kb, n) = if tb { (vb.cols(), vb.rows()) } else { (vb.rows(), vb.cols()) };
        if ka != kb || va.shape().len() != 2 || vb.shape().len() != 2 {
            return Err(mismatch("matmul", va, vb));
        }
        let mut out = vec![0.0; m * n];
        gemm(1.0, operand(va, ta), operand(vb, tb), 0.0, &mut out);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul { a, b, ta, tb }, value))
    }

    fn zip_same(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op<'a>,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, name)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(
        &mut self,
        x: NodeId,
        row: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op<'a>,
    ) -> Result<NodeId> {
        let (vx, vr) = (self.value(x), self.value(row));
        if vr.rows() != 1 || vr.cols() != vx.cols() || vx.shape().len() != 2 {
            return Err(mismatch(name, vx, vr));
        }
        let c = vx.cols();
        let r = vr.data();
        let data = vx.data().iter().enumerate().map(|(idx, &v)| f(v, r[idx % c])).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(op, value))
    }

    /// Adds a `1 x C` row to every row of an `R x C` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(x, row, "add_row", |a, b| a + b, Op::AddRow(x, row))
    }

    /// Multiplies every row of an `R x C` matrix by a `1 x C` row.
    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(x, row, "mul_row", |a, b| a * b, Op::MulRow(x, row))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op<'a>) -> NodeId {
        let value = self.value(x).map(f);
        self.push(op, value)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: NodeId, s: f64) -> NodeId {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn powf(&mut self, x: NodeId, p: f64) -> NodeId {
        self.unary(x, |v| v.powf(p), Op::Powf(x, p))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn row_softmax(&mut self, x: NodeId) -> NodeId {
        let mut value = self.value(x).clone();
        let c = value.cols();
        if c > 0 {
            for row in value.data_mut().chunks_mut(c) {
                kernels::softmax_in_place(row);
            }
        }
        self.push(Op::RowSoftmax(x), value)
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = xs.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let rows = self.value(*first).rows();
        let mut width = 0;
        for &x in xs {
            let v = self.value(x);
            if v.rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), v));
            }
            width += v.cols();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &x in xs {
                data.extend_from_slice(self.value(x).row_slice(r));
            }
        }
        let value = Tensor::matrix(rows, width, data)?;
        Ok(self.push(Op::ConcatCols(xs.to_vec()), value))
    }

    pub fn concat_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = xs.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let v = self.value(x);
            if v.cols() != cols {
                return Err(mismatch("concat_rows", self.value(*first), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(xs.to_vec()), value))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if start + len > v.cols() {
            return Err(Error::ShapeMismatch { op: "slice_cols", left: v.shape().to_vec(), right: vec![start, len] });
        }
        let value = Tensor::from_fn(v.rows(), len, |i, j| v.get(i, start + j));
        Ok(self.push(Op::SliceCols { x, start }, value))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if start + len > v.rows() {
            return Err(Error::ShapeMismatch { op: "slice_rows", left: v.shape().to_vec(), right: vec![start, len] });
        }
        let c = v.cols();
        let value = Tensor::matrix(len, c, v.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(Op::SliceRows { x, start }, value))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    /// Column sums of an `R x C` matrix as a `1 x C` row.
    pub fn column_sums(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let c = v.cols();
        let mut out = vec![0.0; c];
        if c > 0 {
            for row in v.data().chunks(c) {
                kernels::axpy(1.0, row, &mut out);
            }
        }
        self.push(Op::ColumnSums(x), Tensor::row(out))
    }

    /// Per-edge scaled dot products `scale * q[i] . k[j]` for every edge
    /// `j -> i` of `index`, as an `E x 1` column.
    pub fn edge_scores(&mut self, q: NodeId, k: NodeId, index: &'a NeighborIndex, scale: f64) -> Result<NodeId> {
        let (vq, vk) = (self.value(q), self.value(k));
        if vq.cols() != vk.cols()
            || vq.rows() != index.node_count()
            || index.max_source().is_some_and(|m| m >= vk.rows())
        {
            return Err(mismatch("edge_scores", vq, vk));
        }
        let mut out = Vec::with_capacity(index.edge_count());
        for i in 0..index.node_count() {
            let qi = vq.row_slice(i);
            for &j in index.neighbors(i) {
                out.push(scale * kernels::dot(qi, vk.row_slice(j)));
            }
        }
        let value = Tensor::matrix(out.len(), 1, out)?;
        Ok(self.push(Op::EdgeScores { q, k, index, scale }, value))
    }

    /// Softmax over each target's segment of per-edge values.
    pub fn segment_softmax(&mut self, x: NodeId, index: &'a NeighborIndex) -> Result<NodeId> {
        let v = self.value(x);
        if v.len() != index.edge_count() {
            return Err(Error::ShapeMismatch {
                op: "segment_softmax",
                left: v.shape().to_vec(),
                right: vec![index.edge_count()],
            });
        }
        let mut value = v.clone();
        for i in 0..index.node_count() {
            kernels::softmax_in_place(&mut value.data_mut()[index.segment(i)]);
        }
        Ok(self.push(Op::SegmentSoftmax { x, index }, value))
    }

    /// `out[i] = sum over edges j -> i of weights[e] * values[j]`. Targets
    /// without incoming edges get a zero row.
    pub fn edge_aggregate(&mut self, weights: NodeId, values: NodeId, index: &'a NeighborIndex) -> Result<NodeId> {
        let (vw, vv) = (self.value(weights), self.value(values));
        if vw.len() != index.edge_count() || index.max_source().is_some_and(|m| m >= vv.rows()) {
            return Err(mismatch("edge_aggregate", vw, vv));
        }
        let h = vv.cols();
        let mut out = vec![0.0; index.node_count() * h];
        for i in 0..index.node_count() {
            let row = &mut out[i * h..(i + 1) * h];
            for e in index.segment(i) {
                kernels::axpy(vw.data()[e], vv.row_slice(index.sources[e]), row);
            }
        }
        let value = Tensor::matrix(index.node_count(), h, out)?;
        Ok(self.push(Op::EdgeAggregate { weights, values, index }, value))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let v = self.value(loss);
        if v.len() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        self.backward_seeded(&[(loss, Tensor::filled(v.shape(), 1.0))])
    }

    /// Reverse sweep with explicit upstream gradients on one or more nodes.
    pub fn backward_seeded(&self, seeds: &[(NodeId, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (id, seed) in seeds {
            self.value(*id).same_shape(seed, "backward seed")?;
            accumulate(&mut grads, *id, self.value(*id), seed.data());
            last = last.max(id.0);
        }
        for idx in (0..=last).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            for (target, contribution) in self.local_grads(idx, &upstream) {
                accumulate(&mut grads, target, self.value(target), &contribution);
            }
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, idx: usize, upstream: &Tensor) -> Vec<(NodeId, Vec<f64>)> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let d = upstream.data();
        let val = |id: NodeId| self.value(id);
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (val(*a), val(*b));
                let (m, n) = (y.rows(), y.cols());
                let dout = Operand { data: d, rows: m, cols: n, transposed: false };
                let mut ga = vec![0.0; va.len()];
                if *ta {
                    let dout_t = Operand { transposed: true, ..dout };
                    gemm(1.0, operand(vb, *tb), dout_t, 0.0, &mut ga);
                } else {
                    gemm(1.0, dout, operand(vb, !*tb), 0.0, &mut ga);
                }
                let mut gb = vec![0.0; vb.len()];
                if *tb {
                    let dout_t = Operand { transposed: true, ..dout };
                    gemm(1.0, dout_t, operand(va, *ta), 0.0, &mut gb);
                } else {
                    gemm(1.0, operand(va, !*ta), dout, 0.0, &mut gb);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, d.to_vec()), (*b, d.to_vec())],
            Op::Sub(a, b) => vec![(*a, d.to_vec()), (*b, d.iter().map(|g| -g).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                vec![
                    (*a, d.iter().zip(vb).map(|(g, x)| g * x).collect()),
                    (*b, d.iter().zip(va).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::AddRow(x, row) => {
                let c = y.cols();
                let mut gr = vec![0.0; c];
                for chunk in d.chunks(c) {
                    kernels::axpy(1.0, chunk, &mut gr);
                }
                vec![(*x, d.to_vec()), (*row, gr)]
            }
            Op::MulRow(x, row) => {
                let c = y.cols();
                let (vx, vr) = (val(*x).data(), val(*row).data());
                let mut gx = Vec::with_capacity(d.len());
                let mut gr = vec![0.0; c];
                for (idx, (&g, &xv)) in d.iter().zip(vx).enumerate() {
                    gx.push(g * vr[idx % c]);
                    gr[idx % c] += g * xv;
                }
                vec![(*x, gx), (*row, gr)]
            }
            Op::Scale(x, s) => vec![(*x, d.iter().map(|g| g * s).collect())],
            Op::AddScalar(x) => vec![(*x, d.to_vec())],
            Op::Powf(x, p) => {
                let vx = val(*x).data();
                let g = d.iter().zip(vx).map(|(g, &xv)| g * p * xv.powf(p - 1.0)).collect();
                vec![(*x, g)]
            }
            Op::Sigmoid(x) => {
                let g = d.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                vec![(*x, g)]
            }
            Op::Tanh(x) => {
                let g = d.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                vec![(*x, g)]
            }
            Op::Relu(x) => {
                let vx = val(*x).data();
                let g = d.iter().zip(vx).map(|(&g, &xv)| if xv > 0.0 { g } else { 0.0 }).collect();
                vec![(*x, g)]
            }
            Op::RowSoftmax(x) => {
                let c = y.cols();
                let mut g = vec![0.0; d.len()];
                if c > 0 {
                    for ((yr, dr), gr) in y.data().chunks(c).zip(d.chunks(c)).zip(g.chunks_mut(c)) {
                        kernels::softmax_backward(yr, dr, gr);
                    }
                }
                vec![(*x, g)]
            }
            Op::ConcatCols(xs) => {
                let width = y.cols();
                let mut offset = 0;
                xs.iter()
                    .map(|&x| {
                        let w = val(x).cols();
                        let mut g = Vec::with_capacity(val(x).len());
                        for r in 0..y.rows() {
                            g.extend_from_slice(&d[r * width + offset..r * width + offset + w]);
                        }
                        offset += w;
                        (x, g)
                    })
                    .collect()
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                xs.iter()
                    .map(|&x| {
                        let n = val(x).len();
                        let g = d[offset..offset + n].to_vec();
                        offset += n;
                        (x, g)
                    })
                    .collect()
            }
            Op::SliceCols { x, start } => {
                let vx = val(*x);
                let (c, w) = (vx.cols(), y.cols());
                let mut g = vec![0.0; vx.len()];
                for r in 0..y.rows() {
                    g[r * c + start..r * c + start + w].copy_from_slice(&d[r * w..(r + 1) * w]);
                }
                vec![(*x, g)]
            }
            Op::SliceRows { x, start } => {
                let vx = val(*x);
                let c = vx.cols();
                let mut g = vec![0.0; vx.len()];
                g[start * c..start * c + d.len()].copy_from_slice(d);
                vec![(*x, g)]
            }
            Op::SumAll(x) => vec![(*x, vec![d[0]; val(*x).len()])],
            Op::ColumnSums(x) => {
                let n = val(*x).len();
                let c = y.cols();
                vec![(*x, (0..n).map(|i| d[i % c]).collect())]
            }
            Op::EdgeScores { q, k, index, scale } => {
                let (vq, vk) = (val(*q), val(*k));
                let h = vq.cols();
                let mut gq = vec![0.0; vq.len()];
                let mut gk = vec![0.0; vk.len()];
                for i in 0..index.node_count() {
                    for e in index.segment(i) {
                        let j = index.sources[e];
                        let s = scale * d[e];
                        kernels::axpy(s, vk.row_slice(j), &mut gq[i * h..(i + 1) * h]);
                        kernels::axpy(s, vq.row_slice(i), &mut gk[j * h..(j + 1) * h]);
                    }
                }
                vec![(*q, gq), (*k, gk)]
            }
            Op::SegmentSoftmax { x, index } => {
                let mut g = vec![0.0; d.len()];
                for i in 0..index.node_count() {
                    let seg = index.segment(i);
                    kernels::softmax_backward(&y.data()[seg.clone()], &d[seg.clone()], &mut g[seg]);
                }
                vec![(*x, g)]
            }
            Op::EdgeAggregate { weights, values, index } => {
                let (vw, vv) = (val(*weights), val(*values));
                let h = vv.cols();
                let mut gw = vec![0.0; vw.len()];
                let mut gv = vec![0.0; vv.len()];
                for i in 0..index.node_count() {
                    let di = &d[i * h..(i + 1) * h];
                    for e in index.segment(i) {
                        let j = index.sources[e];
                        gw[e] = kernels::dot(di, vv.row_slice(j));
                        kernels::axpy(vw.data()[e], di, &mut gv[j * h..(j + 1) * h]);
                    }
                }
                vec![(*weights, gw), (*values, gv)]
            }
        }
    }
}

fn operand(t: &Tensor, transposed: bool) -> Operand<'_> {
    Operand { data: t.data(), rows: t.rows(), cols: t.cols(), transposed }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, like: &Tensor, contribution: &[f64]) {
    let slot = grads[id.0].get_or_insert_with(|| Tensor::zeros(like.shape()));
    kernels::axpy(1.0, contribution, slot.data_mut());
}

/// Stand-alone primitives, evaluated outside of any model.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    RowSoftmax,
    ConcatCols,
    ConcatRows,
    SliceCols { start: usize, len: usize },
    SumAll,
}

pub fn forward_primitive(op: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    let arity = match op {
        Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul => Some(2),
        Primitive::ConcatCols | Primitive::ConcatRows => None,
        _ => Some(1),
    };
    if let Some(n) = arity {
        if inputs.len() != n {
            return Err(Error::ShapeMismatch {
                op: "forward_primitive arity",
                left: vec![n],
                right: vec![inputs.len()],
            });
        }
    }
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf_ref(t)).collect();
    let out = match op {
        Primitive::MatMul => tape.matmul(ids[0], ids[1])?,
        Primitive::Add => tape.add(ids[0], ids[1])?,
        Primitive::Sub => tape.sub(ids[0], ids[1])?,
        Primitive::Mul => tape.mul(ids[0], ids[1])?,
        Primitive::Sigmoid => tape.sigmoid(ids[0]),
        Primitive::Tanh => tape.tanh(ids[0]),
        Primitive::Relu => tape.relu(ids[0]),
        Primitive::RowSoftmax => tape.row_softmax(ids[0]),
        Primitive::ConcatCols => tape.concat_cols(&ids)?,
        Primitive::ConcatRows => tape.concat_rows(&ids)?,
        Primitive::SliceCols { start, len } => tape.slice_cols(ids[0], *start, *len)?,
        Primitive::SumAll => tape.sum_all(ids[0]),
    };
    Ok(tape.value(out).clone())
}

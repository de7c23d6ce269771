//! Reverse-mode automatic differentiation over rank-2 tensors.
//!
//! A [`Tape`] records one forward pass. Every op appends a node holding its
//! value; [`Tape::backward`] walks the nodes in reverse and returns the
//! gradient of a seed with respect to every node that depends on an input or
//! parameter. Shape mismatches panic.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Variance floor of [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    SegmentMax { x: Var, argmax: Vec<Option<usize>> },
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    RowSums(Var),
    SumAll(Var),
    Pick(Var, Vec<usize>),
    ClippedSurrogate { ratio: Var, advantages: Vec<f64>, eps: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        let tracked = parents.iter().any(|p| self.nodes[p.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Input, tracked: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf without gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Const, tracked: false });
        Var(self.nodes.len() - 1)
    }

    /// A snapshot of a parameter; its gradient goes back to the store via
    /// [`Gradients`] and [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node { value: store.value(id).clone(), op: Op::Param(id), tracked: true });
        Var(self.nodes.len() - 1)
    }

    /// Same value, no gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    /// Adds a `1 x C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = broadcast_rows(self.value(a), self.value(row), |x, y| x + y);
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Multiplies every row of `a` elementwise by a `1 x C` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = broadcast_rows(self.value(a), self.value(row), |x, y| x * y);
        self.push(value, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push(value, Op::AddConst(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        assert!(parts.iter().all(|&p| self.value(p).rows() == rows), "concat_cols row counts");
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        assert!(parts.iter().all(|&p| self.value(p).cols() == cols), "concat_rows col counts");
        let rows = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::new(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(src.rows(), len);
        for r in 0..src.rows() {
            out.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.rows(), "slice_rows out of range");
        let c = src.cols();
        let out = Tensor::new(len, c, src.data()[start * c..(start + len) * c].to_vec());
        self.push(out, Op::SliceRows(a, start), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::Softmax(a), &[a])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        self.push(value, Op::LogSoftmax(a), &[a])
    }

    /// Row-wise normalisation to zero mean and unit variance, then a learned
    /// `1 x C` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let src = self.value(x);
        let (rows, cols) = src.shape();
        assert_eq!(self.shape(gain), (1, cols), "layer_norm gain shape");
        assert_eq!(self.shape(bias), (1, cols), "layer_norm bias shape");
        let mut xhat = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = src.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = xhat.clone();
        for r in 0..rows {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = *o * g.data()[c] + b.data()[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias])
    }

    /// Per segment, the columnwise max over the listed rows of `x`. Empty
    /// segments give zeros. Ties go to the first listed row.
    pub fn segment_max(&mut self, x: Var, segments: &[Vec<usize>]) -> Var {
        let src = self.value(x);
        let cols = src.cols();
        let mut out = Tensor::zeros(segments.len(), cols);
        let mut argmax = vec![None; segments.len() * cols];
        for (s, members) in segments.iter().enumerate() {
            for c in 0..cols {
                let mut best: Option<(usize, f64)> = None;
                for &r in members {
                    let v = src.get(r, c);
                    if best.map_or(true, |(_, b)| v > b) {
                        best = Some((r, v));
                    }
                }
                if let Some((r, v)) = best {
                    out.set(s, c, v);
                    argmax[s * cols + c] = Some(r);
                }
            }
        }
        self.push(out, Op::SegmentMax { x, argmax }, &[x])
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let src = self.value(x);
        let c = src.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(src.row(i));
        }
        self.push(Tensor::new(idx.len(), c, data), Op::GatherRows(x, idx.to_vec()), &[x])
    }

    /// Mean over rows as a `1 x C` vector.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        assert!(src.rows() > 0, "mean of zero rows");
        let n = src.rows() as f64;
        let value = src.col_sums().map(|v| v / n);
        self.push(value, Op::MeanRows(x), &[x])
    }

    /// Sum of each row as an `N x 1` column.
    pub fn row_sums(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = (0..src.rows()).map(|r| src.row(r).iter().sum()).collect();
        self.push(Tensor::new(src.rows(), 1, data), Op::RowSums(x), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        assert!(n > 0, "mean of an empty tensor");
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Element `idx[r]` of each row `r`, as an `N x 1` column.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Var {
        let src = self.value(x);
        assert_eq!(idx.len(), src.rows(), "one index per row");
        let data = idx.iter().enumerate().map(|(r, &c)| src.get(r, c)).collect();
        self.push(Tensor::new(idx.len(), 1, data), Op::Pick(x, idx.to_vec()), &[x])
    }

    /// PPO surrogate per element: `min(r * A, clip(r, 1 - eps, 1 + eps) * A)`
    /// for ratios `r` (`N x 1`) and constant advantages.
    pub fn clipped_surrogate(&mut self, ratio: Var, advantages: &[f64], eps: f64) -> Var {
        let src = self.value(ratio);
        assert_eq!(src.shape(), (advantages.len(), 1), "one advantage per ratio");
        let data = src
            .data()
            .iter()
            .zip(advantages)
            .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a))
            .collect();
        let value = Tensor::new(advantages.len(), 1, data);
        self.push(
            value,
            Op::ClippedSurrogate { ratio, advantages: advantages.to_vec(), eps },
            &[ratio],
        )
    }

    /// Single-head attention: `softmax(Q K^T / sqrt(d) + mask) V`.
    /// Returns the output and the attention weights.
    pub fn scaled_dot_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&Tensor>,
    ) -> (Var, Var) {
        let d = self.shape(q).1;
        assert_eq!(d, self.shape(k).1, "query and key widths");
        let kt = self.transpose(k);
        let scores = self.matmul(q, kt);
        let mut scores = self.scale(scores, 1.0 / (d as f64).sqrt());
        if let Some(mask) = mask {
            let m = self.constant(mask.clone());
            scores = self.add(scores, m);
        }
        let weights = self.softmax(scores);
        (self.matmul(weights, v), weights)
    }

    /// Gradients of the sum of `output` with respect to every tracked node.
    pub fn backward(&self, output: Var) -> Gradients {
        let (r, c) = self.shape(output);
        self.backward_with(output, Tensor::full(r, c, 1.0))
    }

    pub fn backward_with(&self, output: Var, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.shape(output), "seed shape");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            if !self.nodes[i].tracked {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Adds every parameter node's gradient into the store.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.grads[i].as_ref()) {
                store.accumulate_grad(*id, g);
            }
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) | Op::Const => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].tracked {
                    let (ar, ac) = self.shape(*a);
                    let mut da = Tensor::zeros(ar, ac);
                    gemm(g, false, self.value(*b), true, &mut da, 0.0);
                    acc(grads, *a, da);
                }
                if self.nodes[b.0].tracked {
                    let (br, bc) = self.shape(*b);
                    let mut db = Tensor::zeros(br, bc);
                    gemm(self.value(*a), true, g, false, &mut db, 0.0);
                    acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|v| -v));
            }
            Op::AddRow(a, row) => {
                acc(grads, *a, g.clone());
                acc(grads, *row, g.col_sums());
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::MulRow(a, row) => {
                acc(grads, *a, broadcast_rows(g, self.value(*row), |x, y| x * y));
                acc(grads, *row, g.zip_map(self.value(*a), |x, y| x * y).col_sums());
            }
            Op::Scale(a, s) => acc(grads, *a, g.map(|v| v * s)),
            Op::AddConst(a) => acc(grads, *a, g.clone()),
            Op::Transpose(a) => acc(grads, *a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let mut d = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    acc(grads, p, d);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let d = Tensor::new(rows, cols, g.data()[offset * cols..(offset + rows) * cols].to_vec());
                    offset += rows;
                    acc(grads, p, d);
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Tensor::zeros(rows, cols);
                d.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                acc(grads, *a, d);
            }
            Op::Relu(a) => {
                acc(grads, *a, g.zip_map(self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 }))
            }
            Op::Sigmoid(a) => acc(grads, *a, g.zip_map(y, |d, s| d * s * (1.0 - s))),
            Op::Exp(a) => acc(grads, *a, g.zip_map(y, |d, e| d * e)),
            Op::Softmax(a) => {
                let mut d = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                        *o = y.get(r, c) * (g.get(r, c) - dot);
                    }
                }
                acc(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let mut d = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                        *o = g.get(r, c) - y.get(r, c).exp() * total;
                    }
                }
                acc(grads, *a, d);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (rows, cols) = xhat.shape();
                let gv = self.value(*gain);
                let mut dx = Tensor::zeros(rows, cols);
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                for r in 0..rows {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for c in 0..cols {
                        let dy = g.get(r, c);
                        let xh = xhat.get(r, c);
                        dgain[c] += dy * xh;
                        dbias[c] += dy;
                        let dxhat = dy * gv.data()[c];
                        mean_d += dxhat;
                        mean_dx += dxhat * xh;
                    }
                    mean_d /= cols as f64;
                    mean_dx /= cols as f64;
                    for c in 0..cols {
                        let dxhat = g.get(r, c) * gv.data()[c];
                        dx.set(r, c, inv_std[r] * (dxhat - mean_d - xhat.get(r, c) * mean_dx));
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gain, Tensor::row_vector(dgain));
                acc(grads, *bias, Tensor::row_vector(dbias));
            }
            Op::SegmentMax { x, argmax } => {
                let (rows, cols) = self.shape(*x);
                let mut d = Tensor::zeros(rows, cols);
                for s in 0..g.rows() {
                    for c in 0..cols {
                        if let Some(r) = argmax[s * cols + c] {
                            d.data_mut()[r * cols + c] += g.get(s, c);
                        }
                    }
                }
                acc(grads, *x, d);
            }
            Op::GatherRows(x, idx) => {
                let (rows, cols) = self.shape(*x);
                let mut d = Tensor::zeros(rows, cols);
                for (k, &r) in idx.iter().enumerate() {
                    for (o, v) in d.row_mut(r).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(grads, *x, d);
            }
            Op::MeanRows(x) => {
                let (rows, cols) = self.shape(*x);
                let n = rows as f64;
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for (o, v) in d.row_mut(r).iter_mut().zip(g.data()) {
                        *o = v / n;
                    }
                }
                acc(grads, *x, d);
            }
            Op::RowSums(x) => {
                let (rows, cols) = self.shape(*x);
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    d.row_mut(r).fill(g.data()[r]);
                }
                acc(grads, *x, d);
            }
            Op::SumAll(x) => {
                let (rows, cols) = self.shape(*x);
                acc(grads, *x, Tensor::full(rows, cols, g.item()));
            }
            Op::Pick(x, idx) => {
                let (rows, cols) = self.shape(*x);
                let mut d = Tensor::zeros(rows, cols);
                for (r, &c) in idx.iter().enumerate() {
                    d.set(r, c, g.data()[r]);
                }
                acc(grads, *x, d);
            }
            Op::ClippedSurrogate { ratio, advantages, eps } => {
                let rv = self.value(*ratio);
                let data = rv
                    .data()
                    .iter()
                    .zip(advantages)
                    .zip(g.data())
                    .map(|((&r, &a), &dy)| {
                        let clipped = r.clamp(1.0 - eps, 1.0 + eps) * a;
                        if r * a <= clipped {
                            dy * a
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(grads, *ratio, Tensor::new(rv.rows(), 1, data));
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn broadcast_rows(a: &Tensor, row: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(row.shape(), (1, a.cols()), "broadcast row shape");
    let mut out = a.clone();
    for r in 0..a.rows() {
        for (o, &b) in out.row_mut(r).iter_mut().zip(row.data()) {
            *o = f(*o, b);
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

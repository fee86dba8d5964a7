//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is rebuilt for every forward pass. Operations are appended in
//! execution order, so the tape is always topologically sorted and the backward
//! pass is a single reverse sweep.

use std::rc::Rc;

use crate::layout::Layout;
use crate::tensor::{broadcast_shape, for_each_broadcast, gemm, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise binary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, f32),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Transpose(Var),
    Reshape(Var),
    Reduce(ReduceOp, Var, Option<usize>),
    SoftmaxCrossEntropy { logits: Var, label: usize, probs: Vec<f32> },
    SquaredL2(Var, Var),
    RowNorm { input: Var, inv_std: Vec<f32> },
    BlockMatMul { blocks: Var, h: Var, layout: Rc<Layout> },
    BlockTranspose(Var, Rc<Layout>),
    BlockOuterSum(Var, Var, Rc<Layout>),
    SegmentMean(Var, Rc<Layout>),
    SegmentNorm { input: Var, layout: Rc<Layout>, inv_std: Vec<f32> },
    SegmentSum(Var, Rc<[usize]>),
    CrossEntropyRows { logits: Var, probs: Vec<f32>, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    /// Records an input. Leaves created with `requires_grad` get a zeroed gradient
    /// accumulator.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| Tensor::zeros(value.shape()));
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(grad);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf; `None` for non-differentiable leaves and
    /// intermediate values.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().fill(0.0);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(TensorError::dim(
                "matmul",
                format!("inner dimensions {m}x{k} · {k2}x{n}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn elementwise(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let shape = broadcast_shape(sa, sb).ok_or_else(|| {
            TensorError::dim("elementwise", format!("cannot broadcast {sa:?} with {sb:?}"))
        })?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; shape.iter().product()];
        match op {
            BinaryOp::Add => for_each_broadcast(&shape, sa, sb, |o, ia, ib| out[o] = da[ia] + db[ib]),
            BinaryOp::Sub => for_each_broadcast(&shape, sa, sb, |o, ia, ib| out[o] = da[ia] - db[ib]),
            BinaryOp::Mul => for_each_broadcast(&shape, sa, sb, |o, ia, ib| out[o] = da[ia] * db[ib]),
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    /// Multiplication by a fixed scalar.
    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f32::abs);
        self.push(value, Op::Abs(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).transposed()?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Sum or mean over one axis (removing it), or over everything when `axis` is
    /// `None` (yielding a scalar).
    pub fn reduce(&mut self, op: ReduceOp, a: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        let input = self.value(a);
        let value = match axis {
            None => {
                let total: f32 = input.data().iter().sum();
                let v = match op {
                    ReduceOp::Sum => total,
                    ReduceOp::Mean => total / input.len() as f32,
                };
                Tensor::scalar(v)
            }
            Some(axis) => {
                let shape = input.shape();
                if axis >= shape.len() {
                    return Err(TensorError::dim(
                        "reduce",
                        format!("axis {axis} for rank {}", shape.len()),
                    ));
                }
                let (outer, extent, inner) = split_axis(shape, axis);
                let mut out = vec![0.0; outer * inner];
                let data = input.data();
                for o in 0..outer {
                    for e in 0..extent {
                        let base = (o * extent + e) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += data[base + i];
                        }
                    }
                }
                if op == ReduceOp::Mean {
                    let scale = 1.0 / extent as f32;
                    out.iter_mut().for_each(|v| *v *= scale);
                }
                let mut out_shape = shape.to_vec();
                out_shape.remove(axis);
                Tensor::new(out_shape, out)?
            }
        };
        Ok(self.push(value, Op::Reduce(op, a, axis), &[a]))
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        self.reduce(ReduceOp::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        self.reduce(ReduceOp::Mean, a, axis)
    }

    /// `-log softmax(logits)[label]` over all entries of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, TensorError> {
        let values = self.value(logits).data();
        if label >= values.len() {
            return Err(TensorError::Index {
                index: label,
                classes: values.len(),
            });
        }
        let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = values.iter().map(|&v| (v - max).exp()).collect();
        let total: f32 = exps.iter().sum();
        let loss = total.ln() - (values[label] - max);
        let probs = exps.into_iter().map(|e| e / total).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        ))
    }

    pub fn squared_l2_distance(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::dim(
                "squared_l2_distance",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let total: f32 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(total), Op::SquaredL2(a, b), &[a, b]))
    }

    /// Standardizes every row of a matrix to zero mean and unit variance:
    /// `(x − μ) / sqrt(σ² + eps)` with statistics over the row.
    pub fn row_normalize(&mut self, a: Var, eps: f32) -> Result<Var, TensorError> {
        let (rows, cols) = self.value(a).dims2()?;
        let src = self.value(a).data();
        let mut out = vec![0.0; rows * cols];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mu = row.iter().map(|&x| f64::from(x)).sum::<f64>() / cols as f64;
            let var = row.iter().map(|&x| (f64::from(x) - mu).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + f64::from(eps)).sqrt();
            for (o, &x) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = ((f64::from(x) - mu) * inv) as f32;
            }
            inv_std.push(inv as f32);
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(value, Op::RowNorm { input: a, inv_std }, &[a]))
    }

    fn check_blocks(&self, a: Var, layout: &Layout, op: &'static str) -> Result<(), TensorError> {
        let len = self.value(a).len();
        if len != layout.total_block() {
            return Err(TensorError::dim(op, format!("{len} block entries for layout of {}", layout.total_block())));
        }
        Ok(())
    }

    fn check_rows(&self, a: Var, layout: &Layout, op: &'static str) -> Result<usize, TensorError> {
        let (rows, cols) = self.value(a).dims2()?;
        if rows != layout.total_nodes() {
            return Err(TensorError::dim(op, format!("{rows} rows for layout of {} nodes", layout.total_nodes())));
        }
        Ok(cols)
    }

    /// Block-diagonal product: rows of graph `g` in `h` are multiplied by that
    /// graph's `n×n` block of the flat `blocks` buffer.
    pub fn block_matmul(&mut self, blocks: Var, h: Var, layout: &Rc<Layout>) -> Result<Var, TensorError> {
        self.check_blocks(blocks, layout, "block_matmul")?;
        let d = self.check_rows(h, layout, "block_matmul")?;
        let (a, x) = (self.value(blocks).data(), self.value(h).data());
        let mut out = vec![0.0; layout.total_nodes() * d];
        for g in 0..layout.len() {
            let (n, r0, b0) = (layout.size(g), layout.nodes(g).start, layout.block(g).start);
            for i in 0..n {
                let row = &mut out[(r0 + i) * d..(r0 + i + 1) * d];
                for k in 0..n {
                    let w = a[b0 + i * n + k];
                    if w != 0.0 {
                        let src = &x[(r0 + k) * d..(r0 + k + 1) * d];
                        row.iter_mut().zip(src).for_each(|(o, v)| *o += w * v);
                    }
                }
            }
        }
        let value = Tensor::new(vec![layout.total_nodes(), d], out)?;
        let op = Op::BlockMatMul { blocks, h, layout: Rc::clone(layout) };
        Ok(self.push(value, op, &[blocks, h]))
    }

    /// Transposes every `n×n` block of a flat block buffer.
    pub fn block_transpose(&mut self, a: Var, layout: &Rc<Layout>) -> Result<Var, TensorError> {
        self.check_blocks(a, layout, "block_transpose")?;
        let value = block_transposed(self.value(a), layout)?;
        Ok(self.push(value, Op::BlockTranspose(a, Rc::clone(layout)), &[a]))
    }

    /// Flat blocks with entry `(i, j)` of graph `g` equal to `s_i + t_j`, for
    /// node columns `s` and `t` of shape `[N, 1]`.
    pub fn block_outer_sum(&mut self, s: Var, t: Var, layout: &Rc<Layout>) -> Result<Var, TensorError> {
        for v in [s, t] {
            if self.value(v).len() != layout.total_nodes() {
                return Err(TensorError::dim("block_outer_sum", format!("shape {:?}", self.value(v).shape())));
            }
        }
        let (sv, tv) = (self.value(s).data(), self.value(t).data());
        let mut out = vec![0.0; layout.total_block()];
        for g in 0..layout.len() {
            let (n, r0, b0) = (layout.size(g), layout.nodes(g).start, layout.block(g).start);
            for i in 0..n {
                for j in 0..n {
                    out[b0 + i * n + j] = sv[r0 + i] + tv[r0 + j];
                }
            }
        }
        let value = Tensor::vector(out);
        Ok(self.push(value, Op::BlockOuterSum(s, t, Rc::clone(layout)), &[s, t]))
    }

    /// Per-graph mean of node rows: `[N, d]` to `[B, d]`.
    pub fn segment_mean(&mut self, h: Var, layout: &Rc<Layout>) -> Result<Var, TensorError> {
        let d = self.check_rows(h, layout, "segment_mean")?;
        let x = self.value(h).data();
        let mut out = vec![0.0; layout.len() * d];
        for g in 0..layout.len() {
            let row = &mut out[g * d..(g + 1) * d];
            for r in layout.nodes(g) {
                row.iter_mut().zip(&x[r * d..(r + 1) * d]).for_each(|(o, v)| *o += v);
            }
            let inv = 1.0 / layout.size(g).max(1) as f32;
            row.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::new(vec![layout.len(), d], out)?;
        Ok(self.push(value, Op::SegmentMean(h, Rc::clone(layout)), &[h]))
    }

    /// Standardizes every channel over the nodes of each graph separately:
    /// `(x − μ) / sqrt(σ² + eps)` with per-graph, per-column statistics.
    pub fn segment_normalize(&mut self, h: Var, layout: &Rc<Layout>, eps: f32) -> Result<Var, TensorError> {
        let d = self.check_rows(h, layout, "segment_normalize")?;
        let x = self.value(h).data();
        let mut out = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(layout.len() * d);
        for g in 0..layout.len() {
            let rows = layout.nodes(g);
            let n = rows.len() as f64;
            for c in 0..d {
                let mu = rows.clone().map(|r| f64::from(x[r * d + c])).sum::<f64>() / n;
                let var = rows.clone().map(|r| (f64::from(x[r * d + c]) - mu).powi(2)).sum::<f64>() / n;
                let inv = 1.0 / (var + f64::from(eps)).sqrt();
                for r in rows.clone() {
                    out[r * d + c] = ((f64::from(x[r * d + c]) - mu) * inv) as f32;
                }
                inv_std.push(inv as f32);
            }
        }
        let value = Tensor::new(vec![layout.total_nodes(), d], out)?;
        let op = Op::SegmentNorm { input: h, layout: Rc::clone(layout), inv_std };
        Ok(self.push(value, op, &[h]))
    }

    /// Sums consecutive runs of a flat tensor delimited by `offsets`, giving
    /// `[offsets.len() − 1, 1]`.
    pub fn segment_sum(&mut self, a: Var, offsets: &Rc<[usize]>) -> Result<Var, TensorError> {
        let x = self.value(a).data();
        if offsets.first() != Some(&0) || offsets.last() != Some(&x.len()) || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(TensorError::dim("segment_sum", format!("offsets do not tile {} entries", x.len())));
        }
        let out = offsets.windows(2).map(|w| x[w[0]..w[1]].iter().sum()).collect();
        let value = Tensor::new(vec![offsets.len() - 1, 1], out)?;
        Ok(self.push(value, Op::SegmentSum(a, Rc::clone(offsets)), &[a]))
    }

    /// Row-wise `-log softmax(logits_b)[labels_b]` for `[B, C]` logits, giving `[B, 1]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let (b, c) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(TensorError::dim("cross_entropy_rows", format!("{} labels for {b} rows", labels.len())));
        }
        let values = self.value(logits).data();
        let mut probs = Vec::with_capacity(b * c);
        let mut losses = Vec::with_capacity(b);
        for (row, &label) in values.chunks(c).zip(labels) {
            if label >= c {
                return Err(TensorError::Index { index: label, classes: c });
            }
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
            let total: f32 = exps.iter().sum();
            losses.push(total.ln() - (row[label] - max));
            probs.extend(exps.into_iter().map(|e| e / total));
        }
        let value = Tensor::new(vec![b, 1], losses)?;
        let op = Op::CrossEntropyRows { logits, probs, labels: labels.to_vec() };
        Ok(self.push(value, op, &[logits]))
    }

    /// Accumulates `∂root/∂leaf` into the gradient of every differentiable leaf.
    /// Gradients add up across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if self.value(root).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward from non-scalar of shape {:?}",
                self.value(root).shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::ones(self.value(root).shape()));
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if let Some(acc) = self.grads[i].as_mut() {
                        acc.add_assign_scaled(&g, 1.0);
                    }
                }
                op => {
                    for (input, contribution) in self.local_grads(op, &node.value, &g)? {
                        if !self.nodes[input.0].requires_grad {
                            continue;
                        }
                        match adj[input.0].as_mut() {
                            Some(existing) => existing.add_assign_scaled(&contribution, 1.0),
                            None => adj[input.0] = Some(contribution),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn local_grads(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
    ) -> Result<Vec<(Var, Tensor)>, TensorError> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let grads = match *op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = ta.dims2()?;
                let n = tb.shape()[1];
                let mut res = Vec::with_capacity(2);
                if wants(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut ga, false);
                    res.push((a, Tensor::new(vec![m, k], ga)?));
                }
                if wants(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut gb, false);
                    res.push((b, Tensor::new(vec![k, n], gb)?));
                }
                res
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (da, db, dg) = (ta.data(), tb.data(), g.data());
                let mut res = Vec::with_capacity(2);
                if wants(a) {
                    let mut ga = vec![0.0; ta.len()];
                    match kind {
                        BinaryOp::Add | BinaryOp::Sub => {
                            for_each_broadcast(out.shape(), ta.shape(), tb.shape(), |o, ia, _| ga[ia] += dg[o])
                        }
                        BinaryOp::Mul => for_each_broadcast(out.shape(), ta.shape(), tb.shape(), |o, ia, ib| {
                            ga[ia] += dg[o] * db[ib]
                        }),
                    }
                    res.push((a, Tensor::new(ta.shape().to_vec(), ga)?));
                }
                if wants(b) {
                    let mut gb = vec![0.0; tb.len()];
                    match kind {
                        BinaryOp::Add => for_each_broadcast(out.shape(), ta.shape(), tb.shape(), |o, _, ib| gb[ib] += dg[o]),
                        BinaryOp::Sub => for_each_broadcast(out.shape(), ta.shape(), tb.shape(), |o, _, ib| gb[ib] -= dg[o]),
                        BinaryOp::Mul => for_each_broadcast(out.shape(), ta.shape(), tb.shape(), |o, ia, ib| {
                            gb[ib] += dg[o] * da[ia]
                        }),
                    }
                    res.push((b, Tensor::new(tb.shape().to_vec(), gb)?));
                }
                res
            }
            Op::Scale(a, factor) => vec![(a, g.map(|x| x * factor))],
            Op::Sigmoid(a) => {
                let data = out
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(s, go)| go * s * (1.0 - s))
                    .collect();
                vec![(a, Tensor::new(out.shape().to_vec(), data)?)]
            }
            Op::Relu(a) => {
                let data = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(x, go)| if *x > 0.0 { *go } else { 0.0 })
                    .collect();
                vec![(a, Tensor::new(out.shape().to_vec(), data)?)]
            }
            Op::Abs(a) => {
                let data = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(x, go)| {
                        if *x > 0.0 {
                            *go
                        } else if *x < 0.0 {
                            -*go
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(a, Tensor::new(out.shape().to_vec(), data)?)]
            }
            Op::Transpose(a) => vec![(a, g.transposed()?)],
            Op::Reshape(a) => vec![(a, g.clone().reshaped(self.value(a).shape())?)],
            Op::Reduce(kind, a, axis) => {
                let input_shape = self.value(a).shape();
                let total = self.value(a).len();
                let mut data = vec![0.0; total];
                match axis {
                    None => {
                        let mut v = g.data()[0];
                        if kind == ReduceOp::Mean {
                            v /= total as f32;
                        }
                        data.fill(v);
                    }
                    Some(axis) => {
                        let (outer, extent, inner) = split_axis(input_shape, axis);
                        let scale = match kind {
                            ReduceOp::Sum => 1.0,
                            ReduceOp::Mean => 1.0 / extent as f32,
                        };
                        let dg = g.data();
                        for o in 0..outer {
                            for e in 0..extent {
                                let base = (o * extent + e) * inner;
                                for i in 0..inner {
                                    data[base + i] = dg[o * inner + i] * scale;
                                }
                            }
                        }
                    }
                }
                vec![(a, Tensor::new(input_shape.to_vec(), data)?)]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                ref probs,
            } => {
                let go = g.data()[0];
                let data = probs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| go * (p - if i == label { 1.0 } else { 0.0 }))
                    .collect();
                vec![(logits, Tensor::new(self.value(logits).shape().to_vec(), data)?)]
            }
            Op::SquaredL2(a, b) => {
                let go = g.data()[0];
                let diff: Vec<f32> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(x, y)| 2.0 * go * (x - y))
                    .collect();
                let shape = self.value(a).shape().to_vec();
                let neg = diff.iter().map(|d| -d).collect();
                vec![
                    (a, Tensor::new(shape.clone(), diff)?),
                    (b, Tensor::new(shape, neg)?),
                ]
            }
            Op::RowNorm { input, ref inv_std } => {
                let (rows, cols) = out.dims2()?;
                let (y, dy) = (out.data(), g.data());
                let mut data = vec![0.0; rows * cols];
                for (r, inv) in inv_std.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    let (yr, gr) = (&y[span.clone()], &dy[span.clone()]);
                    // f64 sums: the three terms nearly cancel for inputs of small spread.
                    let mean_g = gr.iter().map(|&v| f64::from(v)).sum::<f64>() / cols as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>() / cols as f64;
                    for ((d, &go), &yo) in data[span].iter_mut().zip(gr).zip(yr) {
                        *d = (f64::from(*inv) * (f64::from(go) - mean_g - f64::from(yo) * mean_gy)) as f32;
                    }
                }
                vec![(input, Tensor::new(vec![rows, cols], data)?)]
            }

            Op::BlockMatMul { blocks, h, ref layout } => {
                let (a, x, dy) = (self.value(blocks).data(), self.value(h).data(), g.data());
                let d = out.shape()[1];
                let mut res = Vec::with_capacity(2);
                if wants(h) {
                    let mut gh = vec![0.0; x.len()];
                    for gi in 0..layout.len() {
                        let (n, r0, b0) = (layout.size(gi), layout.nodes(gi).start, layout.block(gi).start);
                        for i in 0..n {
                            let src = &dy[(r0 + i) * d..(r0 + i + 1) * d];
                            for k in 0..n {
                                let w = a[b0 + i * n + k];
                                if w != 0.0 {
                                    let dst = &mut gh[(r0 + k) * d..(r0 + k + 1) * d];
                                    dst.iter_mut().zip(src).for_each(|(o, v)| *o += w * v);
                                }
                            }
                        }
                    }
                    res.push((h, Tensor::new(vec![layout.total_nodes(), d], gh)?));
                }
                if wants(blocks) {
                    let mut ga = vec![0.0; a.len()];
                    for gi in 0..layout.len() {
                        let (n, r0, b0) = (layout.size(gi), layout.nodes(gi).start, layout.block(gi).start);
                        for i in 0..n {
                            let gy = &dy[(r0 + i) * d..(r0 + i + 1) * d];
                            for k in 0..n {
                                let xk = &x[(r0 + k) * d..(r0 + k + 1) * d];
                                ga[b0 + i * n + k] = gy.iter().zip(xk).map(|(p, q)| p * q).sum();
                            }
                        }
                    }
                    res.push((blocks, Tensor::new(self.value(blocks).shape().to_vec(), ga)?));
                }
                res
            }
            Op::BlockTranspose(a, ref layout) => {
                let t = block_transposed(g, layout)?;
                vec![(a, t.reshaped(self.value(a).shape())?)]
            }
            Op::BlockOuterSum(s, t, ref layout) => {
                let dy = g.data();
                let mut gs = vec![0.0; layout.total_nodes()];
                let mut gt = vec![0.0; layout.total_nodes()];
                for gi in 0..layout.len() {
                    let (n, r0, b0) = (layout.size(gi), layout.nodes(gi).start, layout.block(gi).start);
                    for i in 0..n {
                        for j in 0..n {
                            let v = dy[b0 + i * n + j];
                            gs[r0 + i] += v;
                            gt[r0 + j] += v;
                        }
                    }
                }
                vec![
                    (s, Tensor::new(self.value(s).shape().to_vec(), gs)?),
                    (t, Tensor::new(self.value(t).shape().to_vec(), gt)?),
                ]
            }
            Op::SegmentMean(h, ref layout) => {
                let d = out.shape()[1];
                let dy = g.data();
                let mut gh = vec![0.0; layout.total_nodes() * d];
                for gi in 0..layout.len() {
                    let inv = 1.0 / layout.size(gi).max(1) as f32;
                    let src = &dy[gi * d..(gi + 1) * d];
                    for r in layout.nodes(gi) {
                        gh[r * d..(r + 1) * d].iter_mut().zip(src).for_each(|(o, v)| *o = v * inv);
                    }
                }
                vec![(h, Tensor::new(vec![layout.total_nodes(), d], gh)?)]
            }
            Op::SegmentNorm { input, ref layout, ref inv_std } => {
                let d = out.shape()[1];
                let (y, dy) = (out.data(), g.data());
                let mut gx = vec![0.0; y.len()];
                for gi in 0..layout.len() {
                    let rows = layout.nodes(gi);
                    let n = rows.len() as f64;
                    for c in 0..d {
                        let inv = f64::from(inv_std[gi * d + c]);
                        let mean_g = rows.clone().map(|r| f64::from(dy[r * d + c])).sum::<f64>() / n;
                        let mean_gy = rows
                            .clone()
                            .map(|r| f64::from(dy[r * d + c]) * f64::from(y[r * d + c]))
                            .sum::<f64>()
                            / n;
                        for r in rows.clone() {
                            let (go, yo) = (f64::from(dy[r * d + c]), f64::from(y[r * d + c]));
                            gx[r * d + c] = (inv * (go - mean_g - yo * mean_gy)) as f32;
                        }
                    }
                }
                vec![(input, Tensor::new(vec![layout.total_nodes(), d], gx)?)]
            }
            Op::SegmentSum(a, ref offsets) => {
                let dy = g.data();
                let mut ga = vec![0.0; self.value(a).len()];
                for (s, w) in offsets.windows(2).enumerate() {
                    ga[w[0]..w[1]].fill(dy[s]);
                }
                vec![(a, Tensor::new(self.value(a).shape().to_vec(), ga)?)]
            }
            Op::CrossEntropyRows { logits, ref probs, ref labels } => {
                let c = self.value(logits).shape()[1];
                let dy = g.data();
                let mut gl = probs.clone();
                for (b, &label) in labels.iter().enumerate() {
                    let row = &mut gl[b * c..(b + 1) * c];
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= dy[b]);
                }
                vec![(logits, Tensor::new(vec![labels.len(), c], gl)?)]
            }
        };
        Ok(grads)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn block_transposed(t: &Tensor, layout: &Layout) -> Result<Tensor, TensorError> {
    let x = t.data();
    let mut out = vec![0.0; x.len()];
    for g in 0..layout.len() {
        let (n, b0) = (layout.size(g), layout.block(g).start);
        for i in 0..n {
            for j in 0..n {
                out[b0 + j * n + i] = x[b0 + i * n + j];
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

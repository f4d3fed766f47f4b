use std::sync::Arc;

use super::matrix::gemm;
use super::{Matrix, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-index list shared between ops (gather sources, segment ids).
pub type Index = Arc<[usize]>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Index),
    SegmentSum(Var, Index),
    SegmentMean(Var, Index, Vec<f64>),
    SegmentSoftmax(Var, Index, f64),
    LayerNorm(Var, Matrix, Vec<f64>),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode computation tape.
///
/// Operations are appended in evaluation order; [`Tape::backward`] walks the
/// record in exact reverse order and accumulates gradients additively. A tape
/// supports a single backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn check_index(op: &'static str, idx: &[usize], len: usize) -> Result<(), TensorError> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
        return Err(TensorError::Index {
            op,
            index: bad,
            len,
        });
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

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Sign of every input entry to a non-smooth op (`relu`, `abs`), in
    /// record order. Two evaluations with equal patterns lie on the same
    /// smooth piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) | Op::Abs(x) = node.op {
                out.extend(self.value(x).data().iter().map(|v| *v > 0.0));
            }
        }
        out
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Result<Var, TensorError> {
        self.leaf(value, true)
    }

    /// Non-trainable leaf (inputs, targets, frozen parameters).
    pub fn constant(&mut self, value: Matrix) -> Result<Var, TensorError> {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, op_name: &'static str, value: Matrix, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same(name, va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Matrix::from_vec(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (vx, vr) = (self.value(x), self.value(row));
        if vr.rows() != 1 || vr.cols() != vx.cols() {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: vx.shape(),
                rhs: vr.shape(),
            });
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        self.push("add_row", out, Op::AddRow(x, row), &[x, row])
    }

    /// Multiplies every row of `x` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (vx, vr) = (self.value(x), self.value(row));
        if vr.rows() != 1 || vr.cols() != vx.cols() {
            return Err(TensorError::Shape {
                op: "mul_row",
                lhs: vx.shape(),
                rhs: vr.shape(),
            });
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vr.data()) {
                *o *= b;
            }
        }
        self.push("mul_row", out, Op::MulRow(x, row), &[x, row])
    }

    /// Scales row `i` of `x` by entry `i` of an `r x 1` column.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var, TensorError> {
        let (vx, vc) = (self.value(x), self.value(col));
        if vc.cols() != 1 || vc.rows() != vx.rows() {
            return Err(TensorError::Shape {
                op: "mul_col",
                lhs: vx.shape(),
                rhs: vc.shape(),
            });
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            let s = vc.data()[r];
            for o in out.row_mut(r) {
                *o *= s;
            }
        }
        self.push("mul_col", out, Op::MulCol(x, col), &[x, col])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| a * factor).collect();
        let out = Matrix::from_vec(v.rows(), v.cols(), data)?;
        self.push("scale", out, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| a.max(0.0)).collect();
        let out = Matrix::from_vec(v.rows(), v.cols(), data)?;
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| a.abs()).collect();
        let out = Matrix::from_vec(v.rows(), v.cols(), data)?;
        self.push("abs", out, Op::Abs(x), &[x])
    }

    /// Column-wise concatenation; all parts must share a row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows());
        let mut cols = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: (rows, cols),
                    rhs: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            let w = v.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + w].copy_from_slice(v.row(r));
            }
            offset += w;
        }
        self.push("concat", out, Op::Concat(parts.to_vec()), parts)
    }

    /// Row-wise concatenation; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = parts.first().map_or(0, |p| self.value(*p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: (rows, cols),
                    rhs: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// `out[k] = x[idx[k]]`.
    pub fn gather(&mut self, x: Var, idx: Index) -> Result<Var, TensorError> {
        let v = self.value(x);
        check_index("gather", &idx, v.rows())?;
        let mut out = Matrix::zeros(idx.len(), v.cols());
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(v.row(i));
        }
        self.push("gather", out, Op::Gather(x, idx), &[x])
    }

    /// Sums rows of `x` into `segments` buckets: `out[s] = sum_{seg[e]=s} x[e]`.
    pub fn segment_sum(&mut self, x: Var, seg: Index, segments: usize) -> Result<Var, TensorError> {
        let v = self.value(x);
        self.check_segments("segment_sum", v, &seg, segments)?;
        let out = segment_sum_values(v, &seg, segments);
        self.push("segment_sum", out, Op::SegmentSum(x, seg), &[x])
    }

    /// Mean of rows per segment; empty segments yield zero rows.
    pub fn segment_mean(&mut self, x: Var, seg: Index, segments: usize) -> Result<Var, TensorError> {
        let v = self.value(x);
        self.check_segments("segment_mean", v, &seg, segments)?;
        let mut out = segment_sum_values(v, &seg, segments);
        let mut counts = vec![0.0; segments];
        for &s in seg.iter() {
            counts[s] += 1.0;
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0.0 {
                for o in out.row_mut(s) {
                    *o /= c;
                }
            }
        }
        self.push("segment_mean", out, Op::SegmentMean(x, seg, counts), &[x])
    }

    /// Softmax of `x / tau` within each segment of a column vector.
    pub fn segment_softmax(&mut self, x: Var, seg: Index, segments: usize, tau: f64) -> Result<Var, TensorError> {
        if !(tau > 0.0) {
            return Err(TensorError::Temperature(tau));
        }
        let v = self.value(x);
        if v.cols() != 1 {
            return Err(TensorError::Shape {
                op: "segment_softmax",
                lhs: v.shape(),
                rhs: (v.rows(), 1),
            });
        }
        self.check_segments("segment_softmax", v, &seg, segments)?;
        let logits = v.data();
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (e, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(logits[e] / tau);
        }
        let mut out: Vec<f64> = seg.iter().enumerate().map(|(e, &s)| (logits[e] / tau - max[s]).exp()).collect();
        let mut denom = vec![0.0; segments];
        for (e, &s) in seg.iter().enumerate() {
            denom[s] += out[e];
        }
        for (e, &s) in seg.iter().enumerate() {
            out[e] /= denom[s];
        }
        let out = Matrix::column(&out);
        self.push("segment_softmax", out, Op::SegmentSoftmax(x, seg, tau), &[x])
    }

    /// Row-wise layer normalization without affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var, TensorError> {
        let v = self.value(x);
        let (rows, cols) = v.shape();
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let n = cols as f64;
        for r in 0..rows {
            let row = v.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, a) in out.row_mut(r).iter_mut().zip(row) {
                *o = (a - mean) * inv;
            }
            inv_std.push(inv);
        }
        let saved = out.clone();
        self.push("layer_norm", out, Op::LayerNorm(x, saved, inv_std), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Matrix::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(TensorError::Empty { op: "mean" });
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Matrix::scalar(s), Op::Mean(x), &[x])
    }

    /// Squared L2 norm as a scalar.
    pub fn sum_squares(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).sum_squares();
        self.push("sum_squares", Matrix::scalar(s), Op::SumSquares(x), &[x])
    }

    /// L1 loss: mean absolute difference.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let d = self.sub(pred, target)?;
        let a = self.abs(d)?;
        self.mean(a)
    }

    /// L2 penalty: sum of squared entries across several tensors.
    pub fn l2_penalty(&mut self, vars: &[Var]) -> Result<Var, TensorError> {
        let mut acc: Option<Var> = None;
        for &v in vars {
            let s = self.sum_squares(v)?;
            acc = Some(match acc {
                Some(a) => self.add(a, s)?,
                None => s,
            });
        }
        match acc {
            Some(a) => Ok(a),
            None => self.constant(Matrix::scalar(0.0)),
        }
    }

    fn check_segments(&self, op: &'static str, v: &Matrix, seg: &[usize], segments: usize) -> Result<(), TensorError> {
        if seg.len() != v.rows() {
            return Err(TensorError::Shape {
                op,
                lhs: v.shape(),
                rhs: (seg.len(), 1),
            });
        }
        check_index(op, seg, segments)
    }

    /// Reverse pass from a scalar loss. Consumes the tape: a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::Consumed);
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TensorError::NonScalar(shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.nodes[a.0].requires_grad {
                        let mut da = Matrix::zeros(va.rows(), va.cols());
                        gemm(&g, false, vb, true, &mut da, 0.0);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = Matrix::zeros(vb.rows(), vb.cols());
                        gemm(va, true, &g, false, &mut db, 0.0);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, map(&g, |x| -x));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut grads, *a, zip(&g, vb, |x, y| x * y));
                    accumulate(&mut grads, *b, zip(&g, va, |x, y| x * y));
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, *row, column_sums(&g));
                    accumulate(&mut grads, *x, g);
                }
                Op::MulRow(x, row) => {
                    let (vx, vr) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
                    let mut dx = g.clone();
                    let mut dr = Matrix::zeros(1, vr.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            dx.row_mut(r)[c] *= vr.data()[c];
                            dr.data_mut()[c] += g.get(r, c) * vx.get(r, c);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *row, dr);
                }
                Op::MulCol(x, col) => {
                    let (vx, vc) = (&self.nodes[x.0].value, &self.nodes[col.0].value);
                    let mut dx = g.clone();
                    let mut dc = Matrix::zeros(vc.rows(), 1);
                    for r in 0..g.rows() {
                        let s = vc.data()[r];
                        let mut acc = 0.0;
                        for (d, (gv, xv)) in dx.row_mut(r).iter_mut().zip(g.row(r).iter().zip(vx.row(r))) {
                            *d = gv * s;
                            acc += gv * xv;
                        }
                        dc.data_mut()[r] = acc;
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *col, dc);
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut grads, *x, map(&g, |v| v * f));
                }
                Op::Relu(x) => {
                    let vx = &self.nodes[x.0].value;
                    accumulate(&mut grads, *x, zip(&g, vx, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
                }
                Op::Abs(x) => {
                    let vx = &self.nodes[x.0].value;
                    accumulate(&mut grads, *x, zip(&g, vx, |gv, xv| gv * sign(xv)));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols();
                        if self.nodes[p.0].requires_grad {
                            let mut dp = Matrix::zeros(g.rows(), w);
                            for r in 0..g.rows() {
                                dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                            }
                            accumulate(&mut grads, *p, dp);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let v = &self.nodes[p.0].value;
                        let len = v.len();
                        if self.nodes[p.0].requires_grad {
                            let dp = Matrix::from_vec(v.rows(), v.cols(), g.data()[offset..offset + len].to_vec()).expect("same shape");
                            accumulate(&mut grads, *p, dp);
                        }
                        offset += len;
                    }
                }
                Op::Gather(x, idx) => {
                    let vx = &self.nodes[x.0].value;
                    let dx = segment_sum_values(&g, idx, vx.rows());
                    accumulate(&mut grads, *x, dx);
                }
                Op::SegmentSum(x, seg) => {
                    accumulate(&mut grads, *x, gather_values(&g, seg));
                }
                Op::SegmentMean(x, seg, counts) => {
                    let mut dx = gather_values(&g, seg);
                    for (e, &s) in seg.iter().enumerate() {
                        let c = counts[s];
                        for v in dx.row_mut(e) {
                            *v /= c;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SegmentSoftmax(x, seg, tau) => {
                    let y = node.value.data();
                    let gd = g.data();
                    let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; segments];
                    for (e, &s) in seg.iter().enumerate() {
                        dot[s] += y[e] * gd[e];
                    }
                    let dx: Vec<f64> = seg
                        .iter()
                        .enumerate()
                        .map(|(e, &s)| y[e] * (gd[e] - dot[s]) / tau)
                        .collect();
                    accumulate(&mut grads, *x, Matrix::column(&dx));
                }
                Op::LayerNorm(x, xhat, inv_std) => {
                    let n = xhat.cols() as f64;
                    let mut dx = Matrix::zeros(xhat.rows(), xhat.cols());
                    for r in 0..xhat.rows() {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let sum_g: f64 = gr.iter().sum();
                        let sum_gh: f64 = gr.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let inv = inv_std[r];
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = inv / n * (n * gr[c] - sum_g - hr[c] * sum_gh);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let s = g.item();
                    let vx = &self.nodes[x.0].value;
                    accumulate(&mut grads, *x, Matrix::filled(vx.rows(), vx.cols(), s));
                }
                Op::Mean(x) => {
                    let vx = &self.nodes[x.0].value;
                    let s = g.item() / vx.len() as f64;
                    accumulate(&mut grads, *x, Matrix::filled(vx.rows(), vx.cols(), s));
                }
                Op::SumSquares(x) => {
                    let s = 2.0 * g.item();
                    let vx = &self.nodes[x.0].value;
                    accumulate(&mut grads, *x, map(vx, |v| v * s));
                }
            }
        }

        // Only trainable leaves keep their gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                grads[i] = None;
            }
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(TensorError::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn map(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let data = m.data().iter().map(|v| f(*v)).collect();
    Matrix::from_vec(m.rows(), m.cols(), data).expect("same shape")
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

fn segment_sum_values(v: &Matrix, seg: &[usize], segments: usize) -> Matrix {
    let mut out = Matrix::zeros(segments, v.cols());
    for (e, &s) in seg.iter().enumerate() {
        for (o, x) in out.row_mut(s).iter_mut().zip(v.row(e)) {
            *o += x;
        }
    }
    out
}

fn gather_values(v: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), v.cols());
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(k).copy_from_slice(v.row(i));
    }
    out
}

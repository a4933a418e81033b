//! Reverse-mode differentiation over whole tensors.
//!
//! Operations are recorded in execution order, so the node list is always a
//! topological order of the computation. [`Tape::backward`] walks it once in
//! reverse.

use std::rc::Rc;

use crate::numerics::{NumericsError, Tensor};
use crate::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    AddConst(Var),
    MulConst(Var, Tensor<S>),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    LeakyRelu(Var, S),
    Elu(Var),
    Sigmoid(Var),
    Abs(Var),
    Ln(Var),
    Clamp(Var, S, S),
    Reshape(Var),
    GatherRows(Var, Rc<[usize]>),
    RowScale(Var, Var),
    SegmentSoftmax(Var, Rc<[usize]>, usize),
    SegmentSum(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    L2NormalizeRows(Var),
    LogSoftmaxRows(Var),
    Pick(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Recording of one forward computation.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to `var`; zeros when unreachable.
    pub fn get(&self, var: Var) -> Tensor<S> {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Tensor<S> {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn mismatch<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn unary(&mut self, a: Var, value: Tensor<S>, op: Op<S>) -> Var {
        let ng = self.needs(&[a]);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).transpose()?;
        Ok(self.unary(a, value, Op::Transpose(a)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(row));
        let (m, n) = ta.dims2()?;
        if tb.shape() != [1, n] {
            return Err(mismatch("add_row", ta, tb));
        }
        let mut out = ta.data().to_vec();
        for i in 0..m {
            for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        let ng = self.needs(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    /// `a · w + b` with `w: in × out` and `b: 1 × out`.
    pub fn affine(&mut self, a: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let y = self.matmul(a, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.unary(a, value, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.unary(a, value, Op::AddConst(a))
    }

    /// Elementwise product with a fixed tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Tensor<S>) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if ta.shape() != mask.shape() {
            return Err(mismatch("mul_const", ta, &mask));
        }
        let value = ta.zip_map(&mask, |x, m| x * m);
        Ok(self.unary(a, value, Op::MulConst(a, mask)))
    }

    fn check_scalar(&self, op: &'static str, s: Var) -> Result<S, NumericsError> {
        let t = self.value(s);
        if t.len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op,
                left: vec![1, 1],
                right: t.shape().to_vec(),
            });
        }
        Ok(t.item())
    }

    /// Multiplies every element of `a` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let k = self.check_scalar("mul_scalar", s)?;
        let value = self.value(a).map(|x| x * k);
        let ng = self.needs(&[a, s]);
        Ok(self.push(value, Op::MulScalar(a, s), ng))
    }

    /// Divides every element of `a` by the one-element tensor `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let k = self.check_scalar("div_scalar", s)?;
        let value = self.value(a).map(|x| x / k);
        let ng = self.needs(&[a, s]);
        Ok(self.push(value, Op::DivScalar(a, s), ng))
    }

    /// `max(x, slope·x)`; the derivative at exactly zero is taken as 1.
    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Var {
        let value = self
            .value(a)
            .map(|x| if x >= S::zero() { x } else { slope * x });
        self.unary(a, value, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(elu);
        self.unary(a, value, Op::Elu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.unary(a, value, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(S::abs);
        self.unary(a, value, Op::Abs(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(S::ln);
        self.unary(a, value, Op::Ln(a))
    }

    /// Clamps into `[lo, hi]`; no gradient flows through clamped elements.
    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Var {
        let value = self.value(a).map(|x| x.max(lo).min(hi));
        self.unary(a, value, Op::Clamp(a, lo, hi))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.unary(a, value, Op::Reshape(a)))
    }

    /// Selects rows of `a` by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let (m, n) = ta.dims2()?;
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx.iter() {
            if i >= m {
                return Err(NumericsError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    bound: m,
                });
            }
            out.extend_from_slice(ta.row_slice(i));
        }
        let value = Tensor::matrix(idx.len(), n, out)?;
        Ok(self.unary(a, value, Op::GatherRows(a, idx)))
    }

    /// Scales row `r` of `a: E × d` by `w[r]` where `w: E × 1`.
    pub fn row_scale(&mut self, a: Var, w: Var) -> Result<Var, NumericsError> {
        let (ta, tw) = (self.value(a), self.value(w));
        let (e, d) = ta.dims2()?;
        if tw.shape() != [e, 1] {
            return Err(mismatch("row_scale", ta, tw));
        }
        let mut out = ta.data().to_vec();
        for r in 0..e {
            let k = tw.data()[r];
            for o in &mut out[r * d..(r + 1) * d] {
                *o *= k;
            }
        }
        let value = Tensor::matrix(e, d, out)?;
        let ng = self.needs(&[a, w]);
        Ok(self.push(value, Op::RowScale(a, w), ng))
    }

    /// Softmax of an `E × 1` score column within each segment.
    ///
    /// `segment_of[e]` names the segment of entry `e`; every segment in
    /// `0..num_segments` must be non-empty.
    pub fn segment_softmax(
        &mut self,
        scores: Var,
        segment_of: Rc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, NumericsError> {
        let value = segment_softmax_values(self.value(scores), &segment_of, num_segments)?;
        Ok(self.unary(
            scores,
            value,
            Op::SegmentSoftmax(scores, segment_of, num_segments),
        ))
    }

    /// Sums rows of `a: E × d` into `num_segments` output rows.
    pub fn segment_sum(
        &mut self,
        a: Var,
        segment_of: Rc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let (e, d) = ta.dims2()?;
        if segment_of.len() != e {
            return Err(NumericsError::ShapeMismatch {
                op: "segment_sum",
                left: ta.shape().to_vec(),
                right: vec![segment_of.len()],
            });
        }
        let mut out = vec![S::zero(); num_segments * d];
        for (r, &s) in segment_of.iter().enumerate() {
            if s >= num_segments {
                return Err(NumericsError::IndexOutOfBounds {
                    op: "segment_sum",
                    index: s,
                    bound: num_segments,
                });
            }
            for (o, &x) in out[s * d..(s + 1) * d].iter_mut().zip(ta.row_slice(r)) {
                *o += x;
            }
        }
        let value = Tensor::matrix(num_segments, d, out)?;
        Ok(self.unary(a, value, Op::SegmentSum(a, segment_of)))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let m = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let value = Tensor::matrix(m, total, out)?;
        let ng = self.needs(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let n = self.value(parts[0]).dims2()?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims2()?;
            if c != n {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(rows, n, out)?;
        let ng = self.needs(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let (m, n) = ta.dims2()?;
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = ta.row_slice(r);
            let norm = row.iter().map(|&x| x * x).sum::<S>().sqrt();
            if norm == S::zero() {
                return Err(NumericsError::DegenerateInput {
                    op: "l2_normalize",
                    detail: format!("row {r} has zero norm"),
                });
            }
            out.extend(row.iter().map(|&x| x / norm));
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.unary(a, value, Op::L2NormalizeRows(a)))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let (m, n) = ta.dims2()?;
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = ta.row_slice(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<S>().ln();
            out.extend(row.iter().map(|&x| x - lse));
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.unary(a, value, Op::LogSoftmaxRows(a)))
    }

    /// Picks elements by flat row-major index into a `k × 1` column.
    pub fn pick(&mut self, a: Var, flat: Vec<usize>) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let mut out = Vec::with_capacity(flat.len());
        for &i in &flat {
            if i >= ta.len() {
                return Err(NumericsError::IndexOutOfBounds {
                    op: "pick",
                    index: i,
                    bound: ta.len(),
                });
            }
            out.push(ta.data()[i]);
        }
        let value = Tensor::column(out);
        Ok(self.unary(a, value, Op::Pick(a, flat)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.unary(a, value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / S::lit(t.len() as f64));
        self.unary(a, value, Op::Mean(a))
    }

    /// Propagates gradients from a one-element `loss` back to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, NumericsError> {
        let root = self.value(loss);
        if root.len() != 1 {
            return Err(NumericsError::NonScalarRoot {
                shape: root.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.shape(), S::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign_tensor(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(
        &self,
        node: &Node<S>,
        g: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<(), NumericsError> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.matmul(&tb.transpose()?)?);
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, ta.transpose()?.matmul(g)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(tb, |x, y| x * y));
                self.accumulate(grads, *b, g.zip_map(ta, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let (m, n) = g.dims2()?;
                let mut col_sums = vec![S::zero(); n];
                for i in 0..m {
                    for (c, &x) in col_sums.iter_mut().zip(g.row_slice(i)) {
                        *c += x;
                    }
                }
                self.accumulate(grads, *row, Tensor::row(col_sums));
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::MulConst(a, mask) => self.accumulate(grads, *a, g.zip_map(mask, |x, m| x * m)),
            Op::MulScalar(a, s) => {
                let k = self.value(*s).item();
                self.accumulate(grads, *a, g.map(|x| x * k));
                let ds = g.dot(self.value(*a));
                self.accumulate(grads, *s, Tensor::full(self.value(*s).shape(), ds));
            }
            Op::DivScalar(a, s) => {
                let k = self.value(*s).item();
                self.accumulate(grads, *a, g.map(|x| x / k));
                let ds = -g.dot(self.value(*a)) / (k * k);
                self.accumulate(grads, *s, Tensor::full(self.value(*s).shape(), ds));
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let d = g.zip_map(
                    self.value(*a),
                    |gx, x| {
                        if x >= S::zero() {
                            gx
                        } else {
                            gx * slope
                        }
                    },
                );
                self.accumulate(grads, *a, d);
            }
            Op::Elu(a) => {
                let d = g.zip_map(self.value(*a), |gx, x| {
                    if x > S::zero() {
                        gx
                    } else {
                        gx * x.exp()
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |gx, y| gx * y * (S::one() - y)));
            }
            Op::Abs(a) => {
                let d = g.zip_map(self.value(*a), |gx, x| {
                    if x > S::zero() {
                        gx
                    } else if x < S::zero() {
                        -gx
                    } else {
                        S::zero()
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Ln(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |gx, x| gx / x)),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = g.zip_map(self.value(*a), |gx, x| {
                    if x >= lo && x <= hi {
                        gx
                    } else {
                        S::zero()
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshape(shape)?);
            }
            Op::GatherRows(a, idx) => {
                let ta = self.value(*a);
                let (m, n) = ta.dims2()?;
                let mut d = vec![S::zero(); m * n];
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &x) in d[i * n..(i + 1) * n].iter_mut().zip(g.row_slice(r)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d)?);
            }
            Op::RowScale(a, w) => {
                let (ta, tw) = (self.value(*a), self.value(*w));
                let (e, d) = ta.dims2()?;
                let mut da = Vec::with_capacity(e * d);
                let mut dw = Vec::with_capacity(e);
                for r in 0..e {
                    let k = tw.data()[r];
                    let gr = g.row_slice(r);
                    da.extend(gr.iter().map(|&x| x * k));
                    dw.push(gr.iter().zip(ta.row_slice(r)).map(|(&x, &y)| x * y).sum());
                }
                self.accumulate(grads, *a, Tensor::matrix(e, d, da)?);
                self.accumulate(grads, *w, Tensor::column(dw));
            }
            Op::SegmentSoftmax(a, seg, nseg) => {
                let mut dots = vec![S::zero(); *nseg];
                for (e, &s) in seg.iter().enumerate() {
                    dots[s] += g.data()[e] * out.data()[e];
                }
                let d: Vec<S> = seg
                    .iter()
                    .enumerate()
                    .map(|(e, &s)| out.data()[e] * (g.data()[e] - dots[s]))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), d)?);
            }
            Op::SegmentSum(a, seg) => {
                let (_, d) = g.dims2()?;
                let mut da = Vec::with_capacity(seg.len() * d);
                for &s in seg.iter() {
                    da.extend_from_slice(g.row_slice(s));
                }
                self.accumulate(grads, *a, Tensor::matrix(seg.len(), d, da)?);
            }
            Op::ConcatCols(parts) => {
                let (m, _) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).dims2()?.1;
                    if self.nodes[p.0].needs_grad {
                        let mut d = Vec::with_capacity(m * c);
                        for i in 0..m {
                            d.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(m, c, d)?);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let (_, n) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).dims2()?.0;
                    if self.nodes[p.0].needs_grad {
                        let d = g.data()[offset * n..(offset + r) * n].to_vec();
                        self.accumulate(grads, p, Tensor::matrix(r, n, d)?);
                    }
                    offset += r;
                }
            }
            Op::L2NormalizeRows(a) => {
                let ta = self.value(*a);
                let (m, n) = ta.dims2()?;
                let mut d = Vec::with_capacity(m * n);
                for r in 0..m {
                    let norm = ta.row_slice(r).iter().map(|&x| x * x).sum::<S>().sqrt();
                    let (y, gy) = (out.row_slice(r), g.row_slice(r));
                    let proj: S = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                    d.extend(y.iter().zip(gy).map(|(&yi, &gi)| (gi - yi * proj) / norm));
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d)?);
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = out.dims2()?;
                let mut d = Vec::with_capacity(m * n);
                for r in 0..m {
                    let (y, gy) = (out.row_slice(r), g.row_slice(r));
                    let total: S = gy.iter().copied().sum();
                    d.extend(y.iter().zip(gy).map(|(&yi, &gi)| gi - yi.exp() * total));
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d)?);
            }
            Op::Pick(a, flat) => {
                let ta = self.value(*a);
                let mut d = Tensor::zeros(ta.shape());
                for (k, &i) in flat.iter().enumerate() {
                    d.data_mut()[i] += g.data()[k];
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let k = g.item();
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), k));
            }
            Op::Mean(a) => {
                let ta = self.value(*a);
                let k = g.item() / S::lit(ta.len() as f64);
                self.accumulate(grads, *a, Tensor::full(ta.shape(), k));
            }
        }
        Ok(())
    }
}

pub(crate) fn elu<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        x.exp() - S::one()
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Per-segment softmax of a score vector, shared by the tape op and by
/// callers that only need values.
pub fn segment_softmax_values<S: Scalar>(
    scores: &Tensor<S>,
    segment_of: &[usize],
    num_segments: usize,
) -> Result<Tensor<S>, NumericsError> {
    if segment_of.len() != scores.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "segment_softmax",
            left: scores.shape().to_vec(),
            right: vec![segment_of.len()],
        });
    }
    let mut max = vec![S::neg_infinity(); num_segments];
    let mut count = vec![0usize; num_segments];
    for (e, &s) in segment_of.iter().enumerate() {
        if s >= num_segments {
            return Err(NumericsError::IndexOutOfBounds {
                op: "segment_softmax",
                index: s,
                bound: num_segments,
            });
        }
        max[s] = max[s].max(scores.data()[e]);
        count[s] += 1;
    }
    if let Some(empty) = count.iter().position(|&c| c == 0) {
        return Err(NumericsError::EmptySegment { segment: empty });
    }
    let exps: Vec<S> = segment_of
        .iter()
        .enumerate()
        .map(|(e, &s)| (scores.data()[e] - max[s]).exp())
        .collect();
    let mut totals = vec![S::zero(); num_segments];
    for (e, &s) in segment_of.iter().enumerate() {
        totals[s] += exps[e];
    }
    let out = exps
        .iter()
        .zip(segment_of)
        .map(|(&x, &s)| x / totals[s])
        .collect();
    Tensor::new(scores.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor<f64> {
        Tensor::column(v.to_vec())
    }

    #[test]
    fn leaky_relu_values_and_zero_subgradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(col(&[5.0, -5.0, 0.0]));
        let y = t.leaky_relu(x, 0.2);
        assert_eq!(t.value(y).data(), &[5.0, -1.0, 0.0]);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[1.0, 0.2, 1.0]);
    }

    #[test]
    fn elu_values() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(col(&[2.0, 0.0, -1.0]));
        let y = t.elu(x);
        let v = t.value(y).data();
        assert_eq!(v[0], 2.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - (-0.6321205588285577)).abs() < 1e-12);
    }

    #[test]
    fn segment_softmax_cases() {
        let one = segment_softmax_values(&col(&[0.0, 0.0]), &[0, 0], 1).unwrap();
        assert_eq!(one.data(), &[0.5, 0.5]);
        let single = segment_softmax_values(&col(&[123.0]), &[0], 1).unwrap();
        assert_eq!(single.data(), &[1.0]);
        let v = segment_softmax_values(&col(&[5.0, 9.0]), &[0, 0], 1).unwrap();
        let e4 = 4f64.exp();
        assert!((v.data()[0] - 1.0 / (1.0 + e4)).abs() < 1e-15);
        assert!((v.data()[1] - e4 / (1.0 + e4)).abs() < 1e-15);
        assert!((v.data()[0] - 0.01799).abs() < 1e-5);
    }

    #[test]
    fn segment_softmax_rejects_empty_segment() {
        let err = segment_softmax_values(&col(&[1.0, 2.0]), &[0, 2], 3).unwrap_err();
        assert!(matches!(err, NumericsError::EmptySegment { segment: 1 }));
    }

    #[test]
    fn l2_normalize_values_and_zero_vector() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::row(vec![3.0, 4.0]));
        let y = t.l2_normalize_rows(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.6, 0.8]);
        let u = t.constant(Tensor::row(vec![0.0, 1.0, 0.0]));
        let v = t.l2_normalize_rows(u).unwrap();
        assert_eq!(t.value(v), t.value(u));
        let z = t.constant(Tensor::row(vec![0.0, 0.0]));
        assert!(matches!(
            t.l2_normalize_rows(z),
            Err(NumericsError::DegenerateInput { .. })
        ));
    }

    #[test]
    fn backward_sum_and_inner_product() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::matrix(2, 3, vec![1., -2., 3., 0.5, 4., -1.]).unwrap());
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert!(g.get(x).data().iter().all(|&v| v == 1.0));

        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::row(vec![1.5, -2.0, 0.25]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(
            t.backward(x),
            Err(NumericsError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn unreachable_gradients_are_zero() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::row(vec![1.0, 2.0]));
        let unused = t.param(Tensor::zeros(&[2, 2]));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn constants_receive_no_gradient_buffers() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Tensor::row(vec![1.0, 2.0]));
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(c).data(), &[0.0, 0.0]);
    }
}

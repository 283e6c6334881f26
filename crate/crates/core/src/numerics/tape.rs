//! Reverse-mode gradient tape over a fixed set of matrix primitives.
//!
//! Every primitive appends one node holding its output value and whatever it
//! needs for the backward pass. Nodes are only ever appended, so the node
//! index order is a topological order and [`Tape::backward`] is a single
//! reverse sweep that visits each node exactly once.

use std::sync::Arc;

use super::kernels::{self, dot};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-token rotation angles for [`Tape::rotate_pairs`], stored as cos/sin
/// tables of shape `tokens × pairs`.
#[derive(Clone, Debug)]
pub struct RotationTable<T> {
    pub tokens: usize,
    pub pairs: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Modulate { x: Var, shift: Var, scale: Var },
    Scale(Var, T),
    Silu(Var),
    Relu(Var),
    LayerNorm { x: Var, rstd: Vec<T> },
    Softmax(Var),
    Rotate { x: Var, table: Arc<RotationTable<T>> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows { x: Var, ids: Vec<usize> },
    MeanRows(Var),
    MeanAll(Var),
    MinMax { x: Var, extremes: Option<(usize, usize)> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` did not influence the
    /// loss or does not require gradients.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            value: value.with_requires_grad(rg),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t.with_requires_grad(false),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input; gradients flow back to it.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t.with_requires_grad(true),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulNT(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    fn check_row(&self, x: Var, row: Var, what: &str) -> Result<()> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::dim(format!(
                "{what}: row {:?} does not broadcast over {:?}",
                rv.shape(),
                xv.shape()
            )));
        }
        Ok(())
    }

    /// Adds a `1×n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_row(x, row, "add_row")?;
        let r = self.value(row).data().to_vec();
        let mut v = self.value(x).clone();
        for chunk in v.data_mut().chunks_mut(r.len()) {
            chunk.iter_mut().zip(&r).for_each(|(a, &b)| *a += b);
        }
        Ok(self.push(v, Op::AddRow(x, row), &[x, row]))
    }

    /// Multiplies every row of `x` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_row(x, row, "mul_row")?;
        let r = self.value(row).data().to_vec();
        let mut v = self.value(x).clone();
        for chunk in v.data_mut().chunks_mut(r.len()) {
            chunk.iter_mut().zip(&r).for_each(|(a, &b)| *a *= b);
        }
        Ok(self.push(v, Op::MulRow(x, row), &[x, row]))
    }

    /// `x ⊙ (1 + scale) + shift` with `1×n` rows broadcast over `x`.
    pub fn modulate(&mut self, x: Var, shift: Var, scale: Var) -> Result<Var> {
        self.check_row(x, shift, "modulate")?;
        self.check_row(x, scale, "modulate")?;
        let sh = self.value(shift).data().to_vec();
        let sc = self.value(scale).data().to_vec();
        let mut v = self.value(x).clone();
        for chunk in v.data_mut().chunks_mut(sh.len()) {
            for ((a, &s), &b) in chunk.iter_mut().zip(&sc).zip(&sh) {
                *a = *a * (T::one() + s) + b;
            }
        }
        Ok(self.push(v, Op::Modulate { x, shift, scale }, &[x, shift, scale]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|a| a * c);
        self.push(v, Op::Scale(x, c), &[x])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * sigmoid(a));
        self.push(v, Op::Silu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(T::zero()));
        self.push(v, Op::Relu(x), &[x])
    }

    /// Row-wise normalization to zero mean and unit variance, no affine part.
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let n = T::lit(cols as f64);
        let mut out = xv.clone();
        let mut rstd = Vec::with_capacity(xv.rows());
        for row in out.data_mut().chunks_mut(cols) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
            let r = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|a| *a = (*a - mean) * r);
            rstd.push(r);
        }
        self.push(out, Op::LayerNorm { x, rstd }, &[x])
    }

    /// Row-wise softmax; entries with `mask == false` get probability zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(Error::dim(format!(
                    "softmax: mask of {} entries for {:?}",
                    m.len(),
                    xv.shape()
                )));
            }
        }
        let v = kernels::softmax_masked(xv, mask);
        Ok(self.push(v, Op::Softmax(x), &[x]))
    }

    /// Rotates consecutive column pairs `(2p, 2p+1)` of each row by the
    /// angle stored in `table`.
    pub fn rotate_pairs(&mut self, x: Var, table: Arc<RotationTable<T>>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != table.tokens || xv.cols() != 2 * table.pairs {
            return Err(Error::dim(format!(
                "rotate_pairs: input {:?} vs table {}x{}",
                xv.shape(),
                table.tokens,
                2 * table.pairs
            )));
        }
        let mut v = xv.clone();
        apply_rotation(v.data_mut(), &table, false);
        Ok(self.push(v, Op::Rotate { x, table }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if len == 0 || start + len > xv.rows() {
            return Err(Error::dim(format!(
                "slice_rows {start}..{} of {} rows",
                start + len,
                xv.rows()
            )));
        }
        let c = xv.cols();
        let v = Tensor::from_rows(len, c, xv.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(v, Op::SliceRows { x, start }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if len == 0 || start + len > xv.cols() {
            return Err(Error::dim(format!(
                "slice_cols {start}..{} of {} cols",
                start + len,
                xv.cols()
            )));
        }
        let c = xv.cols();
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.data()[r * c + start..r * c + start + len]);
        }
        let v = Tensor::from_rows(xv.rows(), len, data)?;
        Ok(self.push(v, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_rows of nothing"))?;
        let c = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != c {
                return Err(Error::dim(format!("concat_rows: {} cols vs {c}", pv.cols())));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let v = Tensor::from_rows(rows, c, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_cols of nothing"))?;
        let r = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != r {
                return Err(Error::dim(format!("concat_cols: {} rows vs {r}", pv.rows())));
            }
            cols += pv.cols();
        }
        let mut data = Vec::with_capacity(r * cols);
        for row in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(row));
            }
        }
        let v = Tensor::from_rows(r, cols, data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Embedding lookup: output row `k` is row `ids[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if ids.is_empty() {
            return Err(Error::dim("gather_rows with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::dim(format!("gather_rows: id {bad} out of {} rows", xv.rows())));
        }
        let mut data = Vec::with_capacity(ids.len() * xv.cols());
        for &i in ids {
            data.extend_from_slice(xv.row(i));
        }
        let v = Tensor::from_rows(ids.len(), xv.cols(), data)?;
        Ok(self.push(v, Op::GatherRows { x, ids: ids.to_vec() }, &[x]))
    }

    /// Column means, `m×n → 1×n`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = vec![T::zero(); c];
        for row in xv.data().chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, &a)| *o += a);
        }
        let inv = T::one() / T::lit(r as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let v = Tensor::from_rows(1, c, out).expect("mean_rows shape");
        self.push(v, Op::MeanRows(x), &[x])
    }

    /// Mean of every element, as a `1×1` tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        self.push(v, Op::MeanAll(x), &[x])
    }

    /// Min-max normalization of the whole tensor to `[0, 1]`. A constant
    /// tensor maps to zeros.
    pub fn minmax_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (mut lo, mut hi) = (0, 0);
        for (i, &a) in xv.data().iter().enumerate() {
            if a < xv.data()[lo] {
                lo = i;
            }
            if a > xv.data()[hi] {
                hi = i;
            }
        }
        let (mn, mx) = (xv.data()[lo], xv.data()[hi]);
        let range = mx - mn;
        let (v, extremes) = if range > T::zero() {
            (xv.map(|a| (a - mn) / range), Some((lo, hi)))
        } else {
            (Tensor::zeros(xv.shape()), None)
        };
        self.push(v, Op::MinMax { x, extremes }, &[x])
    }

    /// Reverse sweep from a `1×1` output. Only nodes that require gradients
    /// receive them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar output, got {:?}",
                lv.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads)?;
            // Intermediate gradients are not kept; leaves are.
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes[..n].iter().map(|node| node.value.shape().to_vec()).collect(),
        })
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.requires_grad(v) {
            return Ok(());
        }
        let g = g.reshape(self.value(v).shape().to_vec())?;
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| self.value(v);
        let rg = |v: Var| self.requires_grad(v);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if rg(*a) {
                    self.accum(grads, *a, kernels::matmul_nt(g, val(*b))?)?;
                }
                if rg(*b) {
                    self.accum(grads, *b, kernels::matmul_tn(val(*a), g)?)?;
                }
            }
            Op::MatMulNT(a, b) => {
                if rg(*a) {
                    self.accum(grads, *a, kernels::matmul(g, val(*b))?)?;
                }
                if rg(*b) {
                    self.accum(grads, *b, kernels::matmul_tn(g, val(*a))?)?;
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone())?;
                self.accum(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone())?;
                self.accum(grads, *b, g.map(|x| -x))?;
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    self.accum(grads, *a, g.zip_map(val(*b), |x, y| x * y)?)?;
                }
                if rg(*b) {
                    self.accum(grads, *b, g.zip_map(val(*a), |x, y| x * y)?)?;
                }
            }
            Op::AddRow(x, row) => {
                self.accum(grads, *x, g.clone())?;
                if rg(*row) {
                    self.accum(grads, *row, col_sums(g, |_, gv| gv))?;
                }
            }
            Op::MulRow(x, row) => {
                let r = val(*row).data();
                if rg(*x) {
                    let mut gx = g.clone();
                    for chunk in gx.data_mut().chunks_mut(r.len()) {
                        chunk.iter_mut().zip(r).for_each(|(a, &b)| *a *= b);
                    }
                    self.accum(grads, *x, gx)?;
                }
                if rg(*row) {
                    let xd = val(*x).data();
                    self.accum(grads, *row, col_sums(g, |i, gv| gv * xd[i]))?;
                }
            }
            Op::Modulate { x, shift, scale } => {
                let sc = val(*scale).data();
                if rg(*x) {
                    let mut gx = g.clone();
                    for chunk in gx.data_mut().chunks_mut(sc.len()) {
                        chunk.iter_mut().zip(sc).for_each(|(a, &s)| *a *= T::one() + s);
                    }
                    self.accum(grads, *x, gx)?;
                }
                if rg(*shift) {
                    self.accum(grads, *shift, col_sums(g, |_, gv| gv))?;
                }
                if rg(*scale) {
                    let xd = val(*x).data();
                    self.accum(grads, *scale, col_sums(g, |i, gv| gv * xd[i]))?;
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accum(grads, *x, g.map(|a| a * c))?;
            }
            Op::Silu(x) => {
                let gx = g.zip_map(val(*x), |gv, a| {
                    let s = sigmoid(a);
                    gv * s * (T::one() + a * (T::one() - s))
                })?;
                self.accum(grads, *x, gx)?;
            }
            Op::Relu(x) => {
                let gx = g.zip_map(val(*x), |gv, a| if a > T::zero() { gv } else { T::zero() })?;
                self.accum(grads, *x, gx)?;
            }
            Op::LayerNorm { x, rstd } => {
                let y = &node.value;
                let cols = y.cols();
                let n = T::lit(cols as f64);
                let mut gx = g.clone();
                for ((gr, yr), &r) in gx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)).zip(rstd) {
                    let mg = gr.iter().copied().sum::<T>() / n;
                    let mgy = dot(gr, yr) / n;
                    for (a, &yv) in gr.iter_mut().zip(yr) {
                        *a = r * (*a - mg - yv * mgy);
                    }
                }
                self.accum(grads, *x, gx)?;
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let cols = y.cols();
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let s = dot(gr, yr);
                    for (a, &yv) in gr.iter_mut().zip(yr) {
                        *a = yv * (*a - s);
                    }
                }
                self.accum(grads, *x, gx)?;
            }
            Op::Rotate { x, table } => {
                let mut gx = g.clone();
                apply_rotation(gx.data_mut(), table, true);
                self.accum(grads, *x, gx)?;
            }
            Op::SliceRows { x, start } => {
                if rg(*x) {
                    let xv = val(*x);
                    let c = xv.cols();
                    let mut gx = Tensor::zeros(xv.shape());
                    gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    self.accum(grads, *x, gx)?;
                }
            }
            Op::SliceCols { x, start } => {
                if rg(*x) {
                    let xv = val(*x);
                    let (c, len) = (xv.cols(), g.cols());
                    let mut gx = Tensor::zeros(xv.shape());
                    for r in 0..xv.rows() {
                        gx.data_mut()[r * c + start..r * c + start + len].copy_from_slice(g.row(r));
                    }
                    self.accum(grads, *x, gx)?;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if rg(p) {
                        let gp = Tensor::from_rows(len / c, c, g.data()[offset..offset + len].to_vec())?;
                        self.accum(grads, p, gp)?;
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if rg(p) {
                        let mut data = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        self.accum(grads, p, Tensor::from_rows(rows, pc, data)?)?;
                    }
                    offset += pc;
                }
            }
            Op::GatherRows { x, ids } => {
                if rg(*x) {
                    let xv = val(*x);
                    let c = xv.cols();
                    let mut gx = Tensor::zeros(xv.shape());
                    for (k, &i) in ids.iter().enumerate() {
                        let dst = &mut gx.data_mut()[i * c..(i + 1) * c];
                        dst.iter_mut().zip(g.row(k)).for_each(|(a, &b)| *a += b);
                    }
                    self.accum(grads, *x, gx)?;
                }
            }
            Op::MeanRows(x) => {
                let xv = val(*x);
                let inv = T::one() / T::lit(xv.rows() as f64);
                let gd = g.data();
                let gx = Tensor::from_fn(xv.shape(), |i| gd[i % gd.len()] * inv);
                self.accum(grads, *x, gx)?;
            }
            Op::MeanAll(x) => {
                let xv = val(*x);
                let gv = g.data()[0] / T::lit(xv.len() as f64);
                self.accum(grads, *x, Tensor::full(xv.shape(), gv))?;
            }
            Op::MinMax { x, extremes } => {
                let Some((lo, hi)) = *extremes else {
                    return Ok(());
                };
                let xv = val(*x);
                let range = xv.data()[hi] - xv.data()[lo];
                let inv = T::one() / range;
                // y_k = (x_k - x_lo) / (x_hi - x_lo)
                let s_g: T = g.data().iter().copied().sum();
                let s_gy: T = dot(g.data(), node.value.data());
                let mut gx = g.map(|a| a * inv);
                gx.data_mut()[lo] += (s_gy - s_g) * inv;
                gx.data_mut()[hi] -= s_gy * inv;
                self.accum(grads, *x, gx)?;
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid<T: Scalar>(a: T) -> T {
    T::one() / (T::one() + (-a).exp())
}

fn col_sums<T: Scalar>(g: &Tensor<T>, f: impl Fn(usize, T) -> T) -> Tensor<T> {
    let c = g.cols();
    let mut out = vec![T::zero(); c];
    for (i, &gv) in g.data().iter().enumerate() {
        out[i % c] += f(i, gv);
    }
    Tensor::from_rows(1, c, out).expect("col_sums shape")
}

fn apply_rotation<T: Scalar>(data: &mut [T], table: &RotationTable<T>, inverse: bool) {
    let p = table.pairs;
    for (t, row) in data.chunks_mut(2 * p).enumerate() {
        for k in 0..p {
            let c = table.cos[t * p + k];
            let s = if inverse {
                -table.sin[t * p + k]
            } else {
                table.sin[t * p + k]
            };
            let (a, b) = (row[2 * k], row[2 * k + 1]);
            row[2 * k] = a * c - b * s;
            row[2 * k + 1] = a * s + b * c;
        }
    }
}

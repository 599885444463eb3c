//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamSet`] rather than copied, and each parameter group
//! appears on the tape at most once so gradients from repeated uses (a shared
//! encoder run over many inputs) accumulate into a single node.
//! [`Tape::backward`] walks the nodes in reverse and returns per-node
//! gradients, from which parameter gradients are collected.

use std::borrow::Cow;
use std::collections::HashMap;

use super::matrix::{gemm, Matrix};
use super::param::{Gradients, ParamId, ParamSet};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Input,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    AddRow { x: Var, row: Var },
    Add(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix, inv_std: Vec<f64> },
    SoftmaxRows { x: Var },
    Gather { table: Var, ids: Vec<usize> },
    SelectRows { x: Var, rows: Vec<usize> },
    RepeatRow { x: Var, row: usize },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows { x: Var, rows: Vec<usize> },
    Transpose(Var),
    Dropout { x: Var, scale: Vec<f64> },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Sum(Vec<Var>),
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op,
}

/// Records one forward computation.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<ParamId, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A constant leaf. Gradients with respect to it are still reported.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    /// A parameter leaf borrowed from `set`.
    pub fn param(&mut self, set: &'p ParamSet, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        self.nodes.push(Node { value: Cow::Borrowed(set.value(id)), op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = Matrix::zeros(sa.0, sb.1);
        gemm(1.0, self.value(a), false, self.value(b), false, 0.0, &mut out);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: false }))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_err("matmul_t", sa, sb));
        }
        let mut out = Matrix::zeros(sa.0, sb.0);
        gemm(1.0, self.value(a), false, self.value(b), true, 0.0, &mut out);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: true }))
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        if sr.0 != 1 || sr.1 != sx.1 {
            return Err(shape_err("add_row", sx, sr));
        }
        let mut out = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sx.0 {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow { x, row }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale_assign(k);
        self.push(out, Op::Scale(x, k))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            let x = *v;
            let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
            *v = 0.5 * x * (1.0 + t);
        }
        self.push(out, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.tanh();
        }
        self.push(out, Op::Tanh(x))
    }

    /// Per-row normalisation to zero mean and unit (biased) variance, then
    /// `gain * xhat + bias` with `1 x cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (sx, sg, sb) = (self.shape(x), self.shape(gain), self.shape(bias));
        if sg != (1, sx.1) || sb != (1, sx.1) {
            return Err(shape_err("layer_norm gain/bias", sx, sg));
        }
        let (rows, cols) = sx;
        let xv = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, g[c] * h + b[c]);
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }))
    }

    /// Row-wise softmax over the columns whose `key_mask` entry is true;
    /// masked columns get probability exactly zero.
    pub fn softmax_rows(&mut self, x: Var, key_mask: &[bool]) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if key_mask.len() != cols {
            return Err(Error::ShapeMismatch(format!("softmax mask {} vs {} columns", key_mask.len(), cols)));
        }
        if !key_mask.iter().any(|&m| m) {
            return Err(Error::AllMasked { row: 0 });
        }
        let xv = self.value(x);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let max = row
                .iter()
                .zip(key_mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            let o = out.row_mut(r);
            for c in 0..cols {
                if key_mask[c] {
                    let e = (row[c] - max).exp();
                    o[c] = e;
                    z += e;
                }
            }
            for v in o.iter_mut() {
                *v /= z;
            }
        }
        Ok(self.push(out, Op::SoftmaxRows { x }))
    }

    /// Row lookup: output row `r` is `table[ids[r]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, d) = self.shape(table);
        let tv = self.value(table);
        let mut out = Matrix::zeros(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            if id >= n {
                return Err(Error::UnknownTokenId { id, vocab_size: n });
            }
            out.row_mut(r).copy_from_slice(tv.row(id));
        }
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = self.shape(x);
        let xv = self.value(x);
        let mut out = Matrix::zeros(rows.len(), d);
        for (i, &r) in rows.iter().enumerate() {
            if r >= n {
                return Err(Error::IndexOutOfRange { index: r, len: n });
            }
            out.row_mut(i).copy_from_slice(xv.row(r));
        }
        Ok(self.push(out, Op::SelectRows { x, rows: rows.to_vec() }))
    }

    /// A matrix with `times` copies of row `row` of `x`.
    pub fn repeat_row(&mut self, x: Var, row: usize, times: usize) -> Result<Var> {
        let (n, d) = self.shape(x);
        if row >= n {
            return Err(Error::IndexOutOfRange { index: row, len: n });
        }
        let src = self.value(x).row(row).to_vec();
        let mut out = Matrix::zeros(times, d);
        for r in 0..times {
            out.row_mut(r).copy_from_slice(&src);
        }
        Ok(self.push(out, Op::RepeatRow { x, row }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.shape(x);
        if start + len > d {
            return Err(Error::ShapeMismatch(format!("column slice {start}..{} of {d}", start + len)));
        }
        let xv = self.value(x);
        let mut out = Matrix::zeros(n, len);
        for r in 0..n {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.shape(*p).0);
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return Err(Error::ShapeMismatch("concat_cols row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let pv = self.value(*p);
                let w = pv.cols();
                out.row_mut(r)[off..off + w].copy_from_slice(pv.row(r));
                off += w;
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |p| self.shape(*p).1);
        if parts.iter().any(|p| self.shape(*p).1 != cols) {
            return Err(Error::ShapeMismatch("concat_rows column counts differ".into()));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Matrix::from_vec(if cols == 0 { 0 } else { rows }, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Mean of the listed rows, as a `1 x cols` row.
    pub fn mean_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = self.shape(x);
        if rows.is_empty() {
            return Err(Error::InvalidArgument("mean over zero rows".into()));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; d];
        for &r in rows {
            if r >= n {
                return Err(Error::IndexOutOfRange { index: r, len: n });
            }
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let k = rows.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        Ok(self.push(Matrix::row_vector(&out), Op::MeanRows { x, rows: rows.to_vec() }))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    /// Multiplies element-wise by a fixed mask (0 for dropped entries,
    /// `1/(1-p)` for kept ones).
    pub fn dropout_with_mask(&mut self, x: Var, scale: Vec<f64>) -> Result<Var> {
        if scale.len() != self.value(x).len() {
            return Err(Error::ShapeMismatch("dropout mask size".into()));
        }
        let mut out = self.value(x).clone();
        for (v, s) in out.data_mut().iter_mut().zip(&scale) {
            *v *= s;
        }
        Ok(self.push(out, Op::Dropout { x, scale }))
    }

    /// `-log softmax(logits)[target]` over the entries where `mask` is true.
    /// `logits` must be a single row or a single column.
    pub fn cross_entropy(&mut self, logits: Var, mask: Option<&[bool]>, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        let (r, c) = lv.shape();
        if r != 1 && c != 1 {
            return Err(Error::ShapeMismatch(format!("cross_entropy expects a vector, got {r}x{c}")));
        }
        let (loss, probs) = masked_cross_entropy(lv.data(), mask, target)?;
        Ok(self.push(Matrix::scalar(loss), Op::CrossEntropy { logits, target, probs }))
    }

    /// Sum of scalar (1x1) nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let mut s = 0.0;
        for p in parts {
            if self.shape(*p) != (1, 1) {
                return Err(Error::ShapeMismatch("sum expects scalars".into()));
            }
            s += self.value(*p).item();
        }
        Ok(self.push(Matrix::scalar(s), Op::Sum(parts.to_vec())))
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Backward> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::ShapeMismatch("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    if *trans_b {
                        gemm(1.0, &g, false, bv, false, 0.0, &mut da);
                        gemm(1.0, &g, true, av, false, 0.0, &mut db);
                    } else {
                        gemm(1.0, &g, false, bv, true, 0.0, &mut da);
                        gemm(1.0, av, true, &g, false, 0.0, &mut db);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow { x, row } => {
                    let mut dr = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (d, v) in dr.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *row, Matrix::row_vector(&dr));
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale(x, k) => {
                    let mut d = g;
                    d.scale_assign(*k);
                    accumulate(&mut grads, *x, d);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut d = g;
                    for (dv, &x) in d.data_mut().iter_mut().zip(xv.data()) {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *dv *= 0.5 * (1.0 + t) + 0.5 * x * dt;
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let mut d = g;
                    for (dv, y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *dv *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let (rows, cols) = xhat.shape();
                    let gv = self.value(*gain).data();
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dgain = vec![0.0; cols];
                    let mut dbias = vec![0.0; cols];
                    let n = cols as f64;
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..cols {
                            dgain[c] += gr[c] * hr[c];
                            dbias[c] += gr[c];
                            let dh = gr[c] * gv[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                        }
                        let dxr = dx.row_mut(r);
                        for c in 0..cols {
                            let dh = gr[c] * gv[c];
                            dxr[c] = inv_std[r] / n * (n * dh - sum_dh - hr[c] * sum_dh_h);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, Matrix::row_vector(&dgain));
                    accumulate(&mut grads, *bias, Matrix::row_vector(&dbias));
                }
                Op::SoftmaxRows { x } => {
                    let p = &node.value;
                    let mut dx = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let pr = p.row(r);
                        let gr = g.row(r);
                        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = pr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gather { table, ids } => {
                    let (n, d) = self.shape(*table);
                    let mut dt = Matrix::zeros(n, d);
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, b) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::SelectRows { x, rows } => {
                    let (n, d) = self.shape(*x);
                    let mut dx = Matrix::zeros(n, d);
                    for (i, &r) in rows.iter().enumerate() {
                        for (a, b) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::RepeatRow { x, row } => {
                    let (n, d) = self.shape(*x);
                    let mut dx = Matrix::zeros(n, d);
                    for r in 0..g.rows() {
                        for (a, b) in dx.row_mut(*row).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let (n, d) = self.shape(*x);
                    let mut dx = Matrix::zeros(n, d);
                    let w = g.cols();
                    for r in 0..n {
                        dx.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (n, w) = self.shape(*p);
                        let mut dp = Matrix::zeros(n, w);
                        for r in 0..n {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        accumulate(&mut grads, *p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (n, w) = self.shape(*p);
                        let dp = Matrix::from_vec(n, w, g.data()[off..off + n * w].to_vec())?;
                        off += n * w;
                        accumulate(&mut grads, *p, dp);
                    }
                }
                Op::MeanRows { x, rows } => {
                    let (n, d) = self.shape(*x);
                    let mut dx = Matrix::zeros(n, d);
                    let k = 1.0 / rows.len() as f64;
                    for &r in rows {
                        for (a, b) in dx.row_mut(r).iter_mut().zip(g.data()) {
                            *a += k * b;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Transpose(x) => accumulate(&mut grads, *x, g.transpose()),
                Op::Dropout { x, scale } => {
                    let mut d = g;
                    for (v, s) in d.data_mut().iter_mut().zip(scale) {
                        *v *= s;
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::CrossEntropy { logits, target, probs } => {
                    let gv = g.item();
                    let (r, c) = self.shape(*logits);
                    let mut d: Vec<f64> = probs.iter().map(|p| p * gv).collect();
                    d[*target] -= gv;
                    accumulate(&mut grads, *logits, Matrix::from_vec(r, c, d)?);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        accumulate(&mut grads, *p, g.clone());
                    }
                }
            }
        }

        let mut params = Gradients::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[i]) {
                params.add(*id, g);
            }
        }
        Ok(Backward { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
pub struct Backward {
    grads: Vec<Option<Matrix>>,
    params: Gradients,
}

impl Backward {
    /// Gradient with respect to a leaf node, if the loss depends on it.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    pub fn param_grads(&self) -> &Gradients {
        &self.params
    }

    pub fn into_param_grads(self) -> Gradients {
        self.params
    }
}

/// Masked, max-shifted softmax cross-entropy. Returns the loss and the
/// softmax probabilities (zero on masked entries).
pub fn masked_cross_entropy(logits: &[f64], mask: Option<&[bool]>, target: usize) -> Result<(f64, Vec<f64>)> {
    let n = logits.len();
    if target >= n {
        return Err(Error::IndexOutOfRange { index: target, len: n });
    }
    let keep = |i: usize| mask.map_or(true, |m| m[i]);
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::ShapeMismatch(format!("mask {} vs {n} logits", m.len())));
        }
        if !m[target] {
            return Err(Error::InvalidArgument(format!("target {target} is masked out")));
        }
    }
    let mut argmax = target;
    for i in (0..n).filter(|&i| keep(i)) {
        if logits[i] > logits[argmax] {
            argmax = i;
        }
    }
    let max = logits[argmax];
    let mut probs = vec![0.0; n];
    // z = 1 + rest, where the argmax term contributes exactly 1; ln_1p keeps
    // full relative precision when the loss is tiny.
    let mut rest = 0.0;
    for i in (0..n).filter(|&i| keep(i)) {
        let e = (logits[i] - max).exp();
        probs[i] = e;
        if i != argmax {
            rest += e;
        }
    }
    let z = 1.0 + rest;
    for p in &mut probs {
        *p /= z;
    }
    let loss = rest.ln_1p() - (logits[target] - max);
    Ok((loss, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_nodes_are_shared() {
        let mut set = ParamSet::new();
        let id = set.add("w", Matrix::from_rows(&[[2.0]]));
        let mut tape = Tape::new();
        let a = tape.param(&set, id);
        let b = tape.param(&set, id);
        assert_eq!(a, b);
        let y = tape.matmul(a, b).unwrap();
        let back = tape.backward(y).unwrap();
        // d(w^2)/dw = 2w
        assert_eq!(back.param_grads().get(id).unwrap().item(), 4.0);
    }

    #[test]
    fn softmax_rows_zero_on_masked_keys() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::from_rows(&[[1.0, 5.0, 2.0]]));
        let p = tape.softmax_rows(x, &[true, false, true]).unwrap();
        let pv = tape.value(p);
        assert_eq!(pv.get(0, 1), 0.0);
        assert!((pv.get(0, 0) + pv.get(0, 2) - 1.0).abs() < 1e-15);
        assert!(matches!(tape.softmax_rows(x, &[false; 3]), Err(Error::AllMasked { .. })));
    }

    #[test]
    fn gather_rejects_unknown_ids() {
        let mut tape = Tape::new();
        let t = tape.input(Matrix::zeros(3, 2));
        assert!(matches!(tape.gather(t, &[0, 3]), Err(Error::UnknownTokenId { id: 3, vocab_size: 3 })));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.input(Matrix::zeros(2, 2));
        assert!(tape.backward(x).is_err());
    }
}

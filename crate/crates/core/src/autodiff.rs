//! A small reverse-mode tape over [`Matrix`] values.
//!
//! Every forward pass (training or inference) records its operations on a
//! [`Graph`]. Learnable tensors live in a [`ParamStore`] and are referenced
//! by the graph without copying. [`Graph::backward`] walks the tape in
//! reverse and returns one optional gradient per parameter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, softmax_rows, Matrix};

pub type ParamId = usize;

/// Named learnable tensors. Insertion order is the canonical order used for
/// serialization and for gradient vectors.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    #[serde(skip)]
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (i, n.as_str(), v))
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Matrix),
    MulRowConst(Var, Vec<f64>),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        causal: bool,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Shift {
        x: Var,
        offset: isize,
    },
    Reshape(Var),
    MeanRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
}

struct Node {
    op: Op,
    value: Option<Matrix>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Gradient per parameter; `None` for parameters the loss does not touch.
pub type Gradients = Vec<Option<Matrix>>;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, op: Op, value: Option<Matrix>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(m)) => m,
            _ => unreachable!("node without value"),
        }
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Op::Leaf, Some(m))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), None)
    }

    pub fn param_named(&mut self, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), Some(out)))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols != vb.cols {
            return Err(Error::Shape(format!("a*b^T with inner dims {} and {}", va.cols, vb.cols)));
        }
        let mut out = Matrix::zeros(va.rows, vb.rows);
        gemm(false, va, true, vb, 0.0, &mut out);
        Ok(self.push(Op::MatMulT(a, b), Some(out)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("add {:?} and {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(Op::Add(a, b), Some(out)))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows != 1 || vr.cols != va.cols {
            return Err(Error::Shape(format!("broadcast row {:?} onto {:?}", vr.shape(), va.shape())));
        }
        let mut out = va.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&vr.data) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRow(a, row), Some(out)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("mul {:?} and {:?}", va.shape(), vb.shape())));
        }
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let out = Matrix { rows: va.rows, cols: va.cols, data };
        Ok(self.push(Op::Mul(a, b), Some(out)))
    }

    /// Elementwise product with a constant matrix (dropout keep-masks).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let va = self.value(a);
        if va.shape() != mask.shape() {
            return Err(Error::Shape(format!("mask {:?} onto {:?}", mask.shape(), va.shape())));
        }
        let data = va.data.iter().zip(&mask.data).map(|(x, y)| x * y).collect();
        let out = Matrix { rows: va.rows, cols: va.cols, data };
        Ok(self.push(Op::MulConst(a, mask), Some(out)))
    }

    /// Multiplies every row of `a` elementwise by a constant row.
    pub fn mul_row_const(&mut self, a: Var, row: &[f64]) -> Result<Var> {
        let va = self.value(a);
        if va.cols != row.len() {
            return Err(Error::Shape(format!("row of length {} onto {:?}", row.len(), va.shape())));
        }
        let mut out = va.clone();
        for r in 0..out.rows {
            for (o, m) in out.row_mut(r).iter_mut().zip(row) {
                *o *= m;
            }
        }
        Ok(self.push(Op::MulRowConst(a, row.to_vec()), Some(out)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(Op::Scale(a, s), Some(out))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), Some(out))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(crate::tensor::sigmoid);
        self.push(Op::Sigmoid(a), Some(out))
    }

    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let out = softmax_rows(self.value(a), causal);
        self.push(Op::Softmax { x: a, causal }, Some(out))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        if vg.shape() != (1, vx.cols) || vb.shape() != (1, vx.cols) {
            return Err(Error::Shape("layer norm gain/bias must be 1 x d".into()));
        }
        let d = vx.cols as f64;
        let mut xhat = Matrix::zeros(vx.rows, vx.cols);
        let mut inv_std = Vec::with_capacity(vx.rows);
        let mut out = Matrix::zeros(vx.rows, vx.cols);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..vx.cols {
                let h = (row[c] - mean) * inv;
                xhat.set(r, c, h);
                out.set(r, c, h * vg.data[c] + vb.data[c]);
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias, xhat, inv_std }, Some(out)))
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let mut out = Matrix::zeros(ids.len(), vt.cols);
        for (r, &id) in ids.iter().enumerate() {
            if id >= vt.rows {
                return Err(Error::InvalidArgument(format!("token id {id} outside table of {} rows", vt.rows)));
            }
            out.row_mut(r).copy_from_slice(vt.row(id));
        }
        Ok(self.push(Op::Gather { table, ids: ids.to_vec() }, Some(out)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if start + len > vx.cols {
            return Err(Error::Shape(format!("column slice {start}..{} of {} columns", start + len, vx.cols)));
        }
        let out = vx.slice_cols(start, len);
        Ok(self.push(Op::SliceCols { x, start }, Some(out)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Matrix::concat_cols(&vals)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), Some(out)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Matrix::concat_rows(&vals)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Some(out)))
    }

    /// Row `t` of the output is row `t + offset` of `x`, or zeros when that
    /// index falls outside the sequence.
    pub fn shift_rows(&mut self, x: Var, offset: isize) -> Var {
        let vx = self.value(x);
        let mut out = Matrix::zeros(vx.rows, vx.cols);
        for t in 0..vx.rows {
            let src = t as isize + offset;
            if src >= 0 && (src as usize) < vx.rows {
                out.row_mut(t).copy_from_slice(vx.row(src as usize));
            }
        }
        self.push(Op::Shift { x, offset }, Some(out))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let vx = self.value(x);
        let out = Matrix::from_vec(rows, cols, vx.data.clone())?;
        Ok(self.push(Op::Reshape(x), Some(out)))
    }

    /// Mean over rows, producing a `1 x c` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut out = Matrix::zeros(1, vx.cols);
        if vx.rows > 0 {
            for r in 0..vx.rows {
                for (o, v) in out.data.iter_mut().zip(vx.row(r)) {
                    *o += v;
                }
            }
            let n = vx.rows as f64;
            out.data.iter_mut().for_each(|o| *o /= n);
        }
        self.push(Op::MeanRows(x), Some(out))
    }

    /// Mean token cross-entropy of row-wise softmax(logits) against targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        if vl.rows != targets.len() || vl.rows == 0 {
            return Err(Error::Shape(format!("{} logit rows for {} targets", vl.rows, targets.len())));
        }
        let probs = softmax_rows(vl, false);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= vl.cols {
                return Err(Error::InvalidArgument(format!("target {t} outside vocabulary")));
            }
            let row = vl.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += lse - row[t];
        }
        loss /= targets.len() as f64;
        let out = Matrix::from_vec(1, 1, vec![loss])?;
        Ok(self.push(Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, Some(out)))
    }

    /// Values of every recorded softmax whose mask flag equals `causal`.
    pub fn softmax_outputs(&self, causal: bool) -> Vec<&Matrix> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Softmax { causal: c, .. } if c == causal))
            .filter_map(|n| n.value.as_ref())
            .collect()
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = self.value(loss);
        grads[loss.0] = Some(Matrix::filled(seed.rows, seed.cols, 1.0));
        let mut param_grads: Gradients = (0..self.params.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(id) => accumulate(&mut param_grads[*id], g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    gemm(false, &g, true, vb, 0.0, &mut ga);
                    let mut gb = Matrix::zeros(vb.rows, vb.cols);
                    gemm(true, va, false, &g, 0.0, &mut gb);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    gemm(false, &g, false, vb, 0.0, &mut ga);
                    let mut gb = Matrix::zeros(vb.rows, vb.cols);
                    gemm(true, &g, false, va, 0.0, &mut gb);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gr.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[a.0], g);
                    accumulate(&mut grads[row.0], gr);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = zip_map(&g, vb, |x, y| x * y);
                    let gb = zip_map(&g, va, |x, y| x * y);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MulConst(a, mask) => {
                    let ga = zip_map(&g, mask, |x, y| x * y);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::MulRowConst(a, row) => {
                    let mut ga = g;
                    for r in 0..ga.rows {
                        for (o, m) in ga.row_mut(r).iter_mut().zip(row) {
                            *o *= m;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Scale(a, s) => accumulate(&mut grads[a.0], g.scale(*s)),
                Op::Relu(a) => {
                    let va = self.value(*a);
                    let ga = zip_map(&g, va, |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sigmoid(a) => {
                    let out = self.nodes[idx].value.as_ref().expect("sigmoid value");
                    let ga = zip_map(&g, out, |x, s| x * s * (1.0 - s));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Softmax { x, .. } => {
                    let p = self.nodes[idx].value.as_ref().expect("softmax value");
                    let mut gx = Matrix::zeros(p.rows, p.cols);
                    for r in 0..p.rows {
                        let (pr, gr) = (p.row(r), g.row(r));
                        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (pv, gv)) in gx.row_mut(r).iter_mut().zip(pr.iter().zip(gr)) {
                            *o = pv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let vg = self.value(*gain);
                    let d = xhat.cols as f64;
                    let mut gg = Matrix::zeros(1, xhat.cols);
                    let mut gb = Matrix::zeros(1, xhat.cols);
                    let mut gx = Matrix::zeros(xhat.rows, xhat.cols);
                    for r in 0..xhat.rows {
                        let (hr, gr) = (xhat.row(r), g.row(r));
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..xhat.cols {
                            gg.data[c] += gr[c] * hr[c];
                            gb.data[c] += gr[c];
                            let dh = gr[c] * vg.data[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                        }
                        let inv = inv_std[r];
                        for c in 0..xhat.cols {
                            let dh = gr[c] * vg.data[c];
                            gx.set(r, c, inv * (dh - sum_dh / d - hr[c] * sum_dh_h / d));
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[gain.0], gg);
                    accumulate(&mut grads[bias.0], gb);
                }
                Op::Gather { table, ids } => {
                    let vt = self.value(*table);
                    let mut gt = Matrix::zeros(vt.rows, vt.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::SliceCols { x, start } => {
                    let vx = self.value(*x);
                    let mut gx = Matrix::zeros(vx.rows, vx.cols);
                    for r in 0..g.rows {
                        gx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        let gp = g.slice_cols(offset, cols);
                        offset += cols;
                        accumulate(&mut grads[p.0], gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows;
                        let data = g.data[offset * g.cols..(offset + rows) * g.cols].to_vec();
                        offset += rows;
                        accumulate(&mut grads[p.0], Matrix { rows, cols: g.cols, data });
                    }
                }
                Op::Shift { x, offset } => {
                    let mut gx = Matrix::zeros(g.rows, g.cols);
                    for t in 0..g.rows {
                        let src = t as isize + offset;
                        if src >= 0 && (src as usize) < g.rows {
                            gx.row_mut(src as usize).copy_from_slice(g.row(t));
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Reshape(x) => {
                    let vx = self.value(*x);
                    let gx = Matrix { rows: vx.rows, cols: vx.cols, data: g.data };
                    accumulate(&mut grads[x.0], gx);
                }
                Op::MeanRows(x) => {
                    let vx = self.value(*x);
                    let n = vx.rows.max(1) as f64;
                    let mut gx = Matrix::zeros(vx.rows, vx.cols);
                    for r in 0..vx.rows {
                        for (o, v) in gx.row_mut(r).iter_mut().zip(&g.data) {
                            *o = v / n;
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = g.data[0] / targets.len() as f64;
                    let mut gl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        gl.data[r * gl.cols + t] -= 1.0;
                    }
                    gl.data.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads[logits.0], gl);
                }
            }
        }
        param_grads
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Matrix { rows: a.rows, cols: a.cols, data }
}

/// Adds `src` into `dst`, parameter by parameter.
pub fn add_gradients(dst: &mut Gradients, src: Gradients) {
    for (d, s) in dst.iter_mut().zip(src) {
        if let Some(s) = s {
            accumulate(d, s);
        }
    }
}

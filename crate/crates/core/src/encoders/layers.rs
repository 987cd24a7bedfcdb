//! Attention, feed-forward and normalization blocks, in plain matrix form
//! and as recorded graph operations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::{softmax_rows, Matrix};

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Matrix { rows, cols, data }
}

pub(crate) fn register_linear(store: &mut ParamStore, prefix: &str, n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) {
    store.insert(format!("{prefix}.w"), uniform(n_in, n_out, n_in, rng));
    store.insert(format!("{prefix}.b"), Matrix::zeros(1, n_out));
}

pub(crate) fn register_attention(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut ChaCha8Rng) {
    for w in ["wq", "wk", "wv", "wo"] {
        store.insert(format!("{prefix}.{w}"), uniform(d, d, d, rng));
    }
}

pub(crate) fn register_ffn(store: &mut ParamStore, prefix: &str, d: usize, hidden: usize, rng: &mut ChaCha8Rng) {
    register_linear(store, &format!("{prefix}.1"), d, hidden, rng);
    register_linear(store, &format!("{prefix}.2"), hidden, d, rng);
}

pub(crate) fn register_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.gain"), Matrix::filled(1, d, 1.0));
    store.insert(format!("{prefix}.bias"), Matrix::zeros(1, d));
}

fn attend(q: &Matrix, k: &Matrix, v: &Matrix, causal: bool) -> Result<Matrix> {
    if q.cols != k.cols {
        return Err(Error::Shape(format!("query width {} vs key width {}", q.cols, k.cols)));
    }
    if k.rows != v.rows {
        return Err(Error::Shape(format!("{} keys vs {} values", k.rows, v.rows)));
    }
    let scores = q.matmul(&k.transpose())?.scale(1.0 / (q.cols as f64).sqrt());
    softmax_rows(&scores, causal).matmul(v)
}

/// `softmax(Q K^T / sqrt(d_k)) V`.
pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    attend(q, k, v, false)
}

/// Packed projections: head `i` uses columns `i*d_k..(i+1)*d_k` of `w_q`,
/// `w_k` and `w_v`.
pub struct MhaWeights<'a> {
    pub w_q: &'a Matrix,
    pub w_k: &'a Matrix,
    pub w_v: &'a Matrix,
    pub w_o: &'a Matrix,
    pub n_heads: usize,
}

pub fn multi_head_attention(q: &Matrix, k: &Matrix, v: &Matrix, w: &MhaWeights<'_>) -> Result<Matrix> {
    let d = w.w_q.cols;
    if w.n_heads == 0 || !d.is_multiple_of(w.n_heads) {
        return Err(Error::Shape(format!("{} heads do not divide width {d}", w.n_heads)));
    }
    if w.w_k.cols != d || w.w_v.cols != d || w.w_o.rows != d {
        return Err(Error::Shape("projection widths disagree".into()));
    }
    let (pq, pk, pv) = (q.matmul(w.w_q)?, k.matmul(w.w_k)?, v.matmul(w.w_v)?);
    let dk = d / w.n_heads;
    let heads = (0..w.n_heads)
        .map(|h| attend(&pq.slice_cols(h * dk, dk), &pk.slice_cols(h * dk, dk), &pv.slice_cols(h * dk, dk), false))
        .collect::<Result<Vec<_>>>()?;
    Matrix::concat_cols(&heads.iter().collect::<Vec<_>>())?.matmul(w.w_o)
}

pub struct FfnParams<'a> {
    pub w1: &'a Matrix,
    pub b1: &'a [f64],
    pub w2: &'a Matrix,
    pub b2: &'a [f64],
}

/// `max(0, x W1 + b1) W2 + b2` for a single row.
pub fn ffn_forward(x: &[f64], p: &FfnParams<'_>) -> Result<Vec<f64>> {
    if x.len() != p.w1.rows || p.b1.len() != p.w1.cols || p.w2.rows != p.w1.cols || p.b2.len() != p.w2.cols {
        return Err(Error::Shape(format!(
            "ffn: input {} with W1 {:?}, b1 {}, W2 {:?}, b2 {}",
            x.len(),
            p.w1.shape(),
            p.b1.len(),
            p.w2.shape(),
            p.b2.len()
        )));
    }
    let mut hidden = Matrix::row_vector(x).matmul(p.w1)?;
    for (h, b) in hidden.data.iter_mut().zip(p.b1) {
        *h = (*h + b).max(0.0);
    }
    let mut out = hidden.matmul(p.w2)?;
    for (o, b) in out.data.iter_mut().zip(p.b2) {
        *o += b;
    }
    Ok(out.data)
}

/// Multi-head attention of `xq` over `xkv` using the `{prefix}.w{q,k,v,o}`
/// parameters. `causal` hides keys after each query position.
pub(crate) fn attention_graph(
    g: &mut Graph<'_>,
    xq: Var,
    xkv: Var,
    prefix: &str,
    n_heads: usize,
    causal: bool,
) -> Result<Var> {
    let [wq, wk, wv, wo] = ["wq", "wk", "wv", "wo"].map(|w| g.param_named(&format!("{prefix}.{w}")));
    let q = g.matmul(xq, wq)?;
    let k = g.matmul(xkv, wk)?;
    let v = g.matmul(xkv, wv)?;
    let d = g.value(q).cols;
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, h * dk, dk)?, g.slice_cols(k, h * dk, dk)?, g.slice_cols(v, h * dk, dk)?)
        };
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale);
        let weights = g.softmax(scores, causal);
        heads.push(g.matmul(weights, vh)?);
    }
    let cat = if n_heads == 1 { heads[0] } else { g.concat_cols(&heads)? };
    g.matmul(cat, wo)
}

pub(crate) fn linear_graph(g: &mut Graph<'_>, x: Var, prefix: &str) -> Result<Var> {
    let w = g.param_named(&format!("{prefix}.w"));
    let b = g.param_named(&format!("{prefix}.b"));
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

pub(crate) fn ffn_graph(g: &mut Graph<'_>, x: Var, prefix: &str) -> Result<Var> {
    let h = linear_graph(g, x, &format!("{prefix}.1"))?;
    let h = g.relu(h);
    linear_graph(g, h, &format!("{prefix}.2"))
}

pub(crate) fn norm_graph(g: &mut Graph<'_>, x: Var, prefix: &str) -> Result<Var> {
    let gain = g.param_named(&format!("{prefix}.gain"));
    let bias = g.param_named(&format!("{prefix}.bias"));
    g.layer_norm(x, gain, bias)
}

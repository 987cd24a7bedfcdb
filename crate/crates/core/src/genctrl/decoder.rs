//! Textual and visual decoders, their fusion, the control stack and the
//! vocabulary projection.

use rand_chacha::ChaCha8Rng;

use super::ControlMasks;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::corpus::{ImageTensor, Sentiment};
use crate::encoders::{
    attention_graph, embed_graph, encode_images_graph, encode_text_graph, ffn_graph, linear_graph, norm_graph,
    register_attention, register_ffn, register_linear, register_norm, Dropout, ModelConfig, ModelState,
};
use crate::error::{Error, Result};
use crate::tensor::{softmax_rows, Matrix};

const TEXT_DECODER: &str = "dect";
const IMAGE_DECODER: &str = "deci";

pub(crate) fn register_decoders(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    let d = cfg.d_model;
    for dec in [TEXT_DECODER, IMAGE_DECODER] {
        for l in 0..cfg.n_layers {
            register_attention(store, &format!("{dec}.{l}.self"), d, rng);
            register_norm(store, &format!("{dec}.{l}.norm1"), d);
            register_attention(store, &format!("{dec}.{l}.cross"), d, rng);
            register_norm(store, &format!("{dec}.{l}.norm2"), d);
            register_ffn(store, &format!("{dec}.{l}.ffn"), d, cfg.d_ffn_hidden, rng);
            register_norm(store, &format!("{dec}.{l}.norm3"), d);
        }
    }
    register_linear(store, &format!("{TEXT_DECODER}.gate"), 3 * d, d, rng);
    register_linear(store, "fuse", 2 * d, d, rng);
    for j in 1..cfg.n_control_layers {
        register_linear(store, &format!("ctrl.{j}"), d, d, rng);
    }
    register_linear(store, "out", d, cfg.vocab_size, rng);
}

/// Row-wise concatenation: text rows first, then image rows.
pub fn late_fuse(z_t_star: &Matrix, z_i_star: &Matrix) -> Result<Matrix> {
    if z_i_star.rows == 0 {
        return Ok(z_t_star.clone());
    }
    if z_t_star.cols != z_i_star.cols {
        return Err(Error::Shape(format!("context widths {} and {}", z_t_star.cols, z_i_star.cols)));
    }
    Matrix::concat_rows(&[z_t_star, z_i_star])
}

/// Encoded inputs for the two decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub text: Matrix,
    pub image: Matrix,
}

impl Context {
    /// The single-matrix view of both contexts.
    pub fn fused(&self) -> Result<Matrix> {
        late_fuse(&self.text, &self.image)
    }
}

pub fn encode_context(text_tokens: &[usize], images: &[ImageTensor], state: &ModelState) -> Result<Context> {
    let mut g = Graph::new(&state.params);
    let (t, i) = encode_graph(&mut g, text_tokens, images, &state.config, &mut Dropout::disabled())?;
    Ok(Context { text: g.value(t).clone(), image: g.value(i).clone() })
}

pub(crate) fn encode_graph(
    g: &mut Graph<'_>,
    text_tokens: &[usize],
    images: &[ImageTensor],
    cfg: &ModelConfig,
    drop: &mut Dropout,
) -> Result<(Var, Var)> {
    let t = encode_text_graph(g, text_tokens, cfg, drop)?;
    let i = encode_images_graph(g, images, cfg, drop)?;
    Ok((t, i))
}

fn decoder_graph(
    g: &mut Graph<'_>,
    mut x: Var,
    ctx: Var,
    dec: &str,
    cfg: &ModelConfig,
    drop: &mut Dropout,
) -> Result<Var> {
    for l in 0..cfg.n_layers {
        let a = attention_graph(g, x, x, &format!("{dec}.{l}.self"), cfg.n_heads, true)?;
        let a = drop.apply(g, a)?;
        let sum = g.add(x, a)?;
        x = norm_graph(g, sum, &format!("{dec}.{l}.norm1"))?;
        let c = attention_graph(g, x, ctx, &format!("{dec}.{l}.cross"), cfg.n_heads, false)?;
        let c = drop.apply(g, c)?;
        let sum = g.add(x, c)?;
        x = norm_graph(g, sum, &format!("{dec}.{l}.norm2"))?;
        let f = ffn_graph(g, x, &format!("{dec}.{l}.ffn"))?;
        let f = drop.apply(g, f)?;
        let sum = g.add(x, f)?;
        x = norm_graph(g, sum, &format!("{dec}.{l}.norm3"))?;
    }
    Ok(x)
}

/// Both decoders over the prefix `prev`, fused into one `len(prev) x d`
/// hidden state. Nothing sentiment-specific happens here.
pub(crate) fn fused_hidden_graph(
    g: &mut Graph<'_>,
    prev: &[usize],
    ctx: (Var, Var),
    cfg: &ModelConfig,
    drop: &mut Dropout,
) -> Result<Var> {
    let x = embed_graph(g, prev, cfg)?;
    let x = drop.apply(g, x)?;
    let ht = decoder_graph(g, x, ctx.0, TEXT_DECODER, cfg, drop)?;
    // causal width-3 convolution gate
    let back2 = g.shift_rows(ht, -2);
    let back1 = g.shift_rows(ht, -1);
    let window = g.concat_cols(&[back2, back1, ht])?;
    let gate = linear_graph(g, window, &format!("{TEXT_DECODER}.gate"))?;
    let gate = g.sigmoid(gate);
    let ht = g.mul(ht, gate)?;
    let hi = decoder_graph(g, x, ctx.1, IMAGE_DECODER, cfg, drop)?;
    let both = g.concat_cols(&[ht, hi])?;
    linear_graph(g, both, "fuse")
}

/// Control stack then vocabulary logits. `None` skips every mask but keeps
/// the stack's linear maps.
pub(crate) fn logits_graph(
    g: &mut Graph<'_>,
    hidden: Var,
    masks: &[ControlMasks],
    control: Option<Sentiment>,
) -> Result<Var> {
    let mut h = hidden;
    for (j, pair) in masks.iter().enumerate() {
        if j > 0 {
            h = linear_graph(g, h, &format!("ctrl.{j}"))?;
        }
        if let Some(s) = control {
            h = g.mul_row_const(h, &pair.as_f64(s))?;
        }
    }
    linear_graph(g, h, "out")
}

/// Next-token distribution after `prev_tokens` (which start with BOS).
pub fn decode_step(
    prev_tokens: &[usize],
    context: &Context,
    state: &ModelState,
    masks: &[ControlMasks],
    sentiment: Option<Sentiment>,
) -> Result<Vec<f64>> {
    if masks.len() != state.config.n_control_layers {
        return Err(Error::Shape(format!(
            "{} mask pairs for {} control layers",
            masks.len(),
            state.config.n_control_layers
        )));
    }
    if masks.iter().any(|m| m.dim() != state.config.d_model) {
        return Err(Error::Shape("mask width differs from d_model".into()));
    }
    let logits = step_logits(prev_tokens, context, state, masks, sentiment)?;
    Ok(softmax_rows(&logits, false).data)
}

/// Logits of the last prefix position, as a `1 x vocab` row.
pub(crate) fn step_logits(
    prev_tokens: &[usize],
    context: &Context,
    state: &ModelState,
    masks: &[ControlMasks],
    sentiment: Option<Sentiment>,
) -> Result<Matrix> {
    let mut g = Graph::new(&state.params);
    let ctx = (g.constant(context.text.clone()), g.constant(context.image.clone()));
    let h = fused_hidden_graph(&mut g, prev_tokens, ctx, &state.config, &mut Dropout::disabled())?;
    let last = g.value(h).rows - 1;
    let h_last = Matrix::row_vector(g.value(h).row(last));
    let h_last = g.constant(h_last);
    let logits = logits_graph(&mut g, h_last, masks, sentiment)?;
    Ok(g.value(logits).clone())
}

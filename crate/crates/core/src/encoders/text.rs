use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    attention_graph, ffn_graph, linear_graph, norm_graph, register_attention, register_ffn, register_linear,
    register_norm, uniform,
};
use super::{Dropout, ModelConfig, ModelState};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::{sinusoidal_positions, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextContext {
    /// One row per input token.
    pub z_t_star: Matrix,
}

/// The token table and its projection are shared by the encoder and both
/// decoders.
pub(crate) fn register_embedding(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    store.insert("embed", uniform(cfg.vocab_size, cfg.d_embed, cfg.d_embed, rng));
    register_linear(store, "embed.proj", cfg.d_embed, cfg.d_model, rng);
}

pub(crate) fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    let d = cfg.d_model;
    for l in 0..cfg.n_layers {
        register_attention(store, &format!("enc.{l}.attn"), d, rng);
        register_norm(store, &format!("enc.{l}.norm1"), d);
        register_ffn(store, &format!("enc.{l}.ffn"), d, cfg.d_ffn_hidden, rng);
        register_norm(store, &format!("enc.{l}.norm2"), d);
    }
    register_linear(store, "enc.gate", 3 * d, d, rng);
}

/// Token embeddings projected to `d_model` plus sinusoidal positions.
pub(crate) fn embed_graph(g: &mut Graph<'_>, ids: &[usize], cfg: &ModelConfig) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("empty token sequence".into()));
    }
    if ids.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong { len: ids.len(), max: cfg.max_seq_len });
    }
    let table = g.param_named("embed");
    let e = g.gather(table, ids)?;
    let x = linear_graph(g, e, "embed.proj")?;
    let pos = g.constant(sinusoidal_positions(ids.len(), cfg.d_model));
    g.add(x, pos)
}

pub(crate) fn encode_text_graph(
    g: &mut Graph<'_>,
    tokens: &[usize],
    cfg: &ModelConfig,
    drop: &mut Dropout,
) -> Result<Var> {
    let x = embed_graph(g, tokens, cfg)?;
    let mut x = drop.apply(g, x)?;
    for l in 0..cfg.n_layers {
        let a = attention_graph(g, x, x, &format!("enc.{l}.attn"), cfg.n_heads, false)?;
        let a = drop.apply(g, a)?;
        let sum = g.add(x, a)?;
        x = norm_graph(g, sum, &format!("enc.{l}.norm1"))?;
        let f = ffn_graph(g, x, &format!("enc.{l}.ffn"))?;
        let f = drop.apply(g, f)?;
        let sum = g.add(x, f)?;
        x = norm_graph(g, sum, &format!("enc.{l}.norm2"))?;
    }
    // width-3 convolution over the sequence gates each position
    let prev = g.shift_rows(x, -1);
    let next = g.shift_rows(x, 1);
    let window = g.concat_cols(&[prev, x, next])?;
    let gate = linear_graph(g, window, "enc.gate")?;
    let gate = g.sigmoid(gate);
    g.mul(x, gate)
}

pub fn encode_text(tokens: &[usize], state: &ModelState) -> Result<TextContext> {
    let mut g = Graph::new(&state.params);
    let z = encode_text_graph(&mut g, tokens, &state.config, &mut Dropout::disabled())?;
    Ok(TextContext { z_t_star: g.value(z).clone() })
}

//! Context encoders: a transformer text encoder with a convolution-gated
//! output, and a patch-grid visual encoder with an optional region-proposal
//! plug-in.

mod layers;
mod proposals;
mod state;
mod text;
mod visual;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use layers::{ffn_forward, multi_head_attention, scaled_dot_attention, FfnParams, MhaWeights};
pub use proposals::{
    encode_proposals, objectness_score, Objectness, ProposalProjection, RegionProposal, RegionProposer,
};
pub use state::{ModelState, MODEL_FILE_VERSION};
pub use text::{encode_text, TextContext};
pub use visual::{encode_images, VisualContext, CONV_STRIDE};

pub(crate) use layers::{
    attention_graph, ffn_graph, linear_graph, norm_graph, register_attention, register_ffn, register_linear,
    register_norm,
};
pub(crate) use text::{embed_graph, encode_text_graph};
pub(crate) use visual::encode_images_graph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_embed: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn_hidden: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    /// Longest token sequence accepted by either encoder input or decoder.
    pub max_seq_len: usize,
    /// Patches per image side in the default visual backend.
    pub patch_grid: usize,
    pub conv_channels: usize,
    /// Percent of control-layer neurons silenced for each sentiment.
    pub control_x: f64,
    pub n_control_layers: usize,
}

impl ModelConfig {
    /// 128 hidden units, 100-dim embeddings, 3 layers, 8 heads.
    pub fn paper(vocab_size: usize) -> Self {
        Self {
            d_model: 128,
            d_embed: 100,
            n_layers: 3,
            n_heads: 8,
            d_ffn_hidden: 512,
            dropout: 0.1,
            vocab_size,
            max_seq_len: 64,
            patch_grid: 4,
            conv_channels: 8,
            control_x: 10.0,
            n_control_layers: 1,
        }
    }

    /// The 512/2048 transformer sizing.
    pub fn wide(vocab_size: usize) -> Self {
        Self { d_model: 512, d_ffn_hidden: 2048, ..Self::paper(vocab_size) }
    }

    /// Small enough to train on one CPU core in minutes.
    pub fn desk(vocab_size: usize) -> Self {
        Self { d_model: 64, d_embed: 48, n_layers: 2, n_heads: 4, d_ffn_hidden: 256, ..Self::paper(vocab_size) }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Regions per image in the patch-grid backend.
    pub fn regions_per_image(&self) -> usize {
        self.patch_grid * self.patch_grid
    }

    /// Width of one region feature before projection.
    pub fn region_feature_dim(&self) -> usize {
        let side = crate::corpus::IMAGE_SIDE / CONV_STRIDE / self.patch_grid;
        side * side * self.conv_channels
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("d_embed", self.d_embed),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ffn_hidden", self.d_ffn_hidden),
            ("max_seq_len", self.max_seq_len),
            ("patch_grid", self.patch_grid),
            ("conv_channels", self.conv_channels),
            ("n_control_layers", self.n_control_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.vocab_size <= crate::corpus::UNK + 1 {
            return Err(Error::InvalidArgument("vocabulary has no words beyond the reserved ids".into()));
        }
        let cells = crate::corpus::IMAGE_SIDE / CONV_STRIDE;
        if !cells.is_multiple_of(self.patch_grid) {
            return Err(Error::InvalidArgument(format!("patch_grid {} does not divide {cells}", self.patch_grid)));
        }
        if !(0.0..=100.0).contains(&self.control_x) {
            return Err(Error::InvalidArgument(format!("control_x {} outside [0, 100]", self.control_x)));
        }
        Ok(())
    }
}

/// Inverted dropout. Disabled instances are the identity, which is what
/// every inference path uses.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn disabled() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, seed: u64) -> Self {
        Self { rate, rng: (rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub(crate) fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else { return Ok(x) };
        let (rows, cols) = g.value(x).shape();
        let keep = 1.0 - self.rate;
        let data = (0..rows * cols).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        g.mul_const(x, Matrix::from_vec(rows, cols, data)?)
    }
}

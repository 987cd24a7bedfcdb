//! Dual decoders with late fusion, the sentiment control layer, training
//! and beam-search generation.
//!
//! A requested sentiment is an `Option<Sentiment>`: `None` generates with
//! the control layer disabled.

mod beam;
mod control;
mod decoder;
mod train;

pub use beam::{
    beam_search, beam_search_generate, greedy_decode, BeamOptions, GenerationResult, ModelStepper, StepModel,
    DEFAULT_BEAM_SIZE,
};
pub use control::{apply_control, build_control_masks, zeros_per_mask, ControlMasks};
pub use decoder::{decode_step, encode_context, late_fuse, Context};
pub use train::{attention_trace, sample_loss, train, AttentionTrace, TrainConfig, TrainReport};

pub(crate) use decoder::{fused_hidden_graph, logits_graph, register_decoders};

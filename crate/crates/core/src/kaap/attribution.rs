use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::dice::{select_k_with, KSelection};
use super::partition::{partition_features, Modality, SegmentedInput};
use super::shapley::{shapley_auto, verify_additivity, CoalitionGame};
use crate::autodiff::Graph;
use crate::corpus::{ImageTensor, Sample, Sentiment, BOS, IMAGE_SIDE, IMAGE_SLOTS, PAD};
use crate::encoders::{encode_images_graph, encode_text_graph, Dropout, ModelState};
use crate::error::{Error, Result};
use crate::genctrl::{beam_search_generate, encode_context, fused_hidden_graph, logits_graph, BeamOptions};

pub const DEFAULT_K_IMAGE: usize = 5;
pub const DEFAULT_K_TEXT: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionOptions {
    pub k: usize,
    /// Image slot whose pixels are segmented.
    pub image_slot: usize,
    pub beam: BeamOptions,
}

impl AttributionOptions {
    pub fn for_modality(modality: Modality) -> Self {
        let k = match modality {
            Modality::Image => DEFAULT_K_IMAGE,
            Modality::Text => DEFAULT_K_TEXT,
        };
        Self { k, image_slot: 0, beam: BeamOptions::default() }
    }
}

/// Teacher-forced score of a fixed generation `target` (`BOS .. EOS`) while
/// the segments outside a coalition are replaced by the baseline (PAD
/// tokens, zero pixels). The score is the mean per-token log-probability
/// under the requested sentiment's mask minus that under the opposite mask.
pub struct SentimentMarginGame<'a> {
    state: &'a ModelState,
    sample: &'a Sample,
    sentiment: Sentiment,
    target: &'a [usize],
    segments: SegmentedInput,
    owner: Vec<usize>,
    slot: usize,
    /// Encoding of the modality that is not being perturbed.
    fixed: crate::tensor::Matrix,
}

impl<'a> SentimentMarginGame<'a> {
    pub fn new(
        state: &'a ModelState,
        sample: &'a Sample,
        sentiment: Sentiment,
        target: &'a [usize],
        segments: SegmentedInput,
        slot: usize,
    ) -> Result<Self> {
        if target.len() < 2 || target[0] != BOS {
            return Err(Error::InvalidArgument("target must start with BOS and hold at least one token".into()));
        }
        if slot >= IMAGE_SLOTS {
            return Err(Error::InvalidArgument(format!("image slot {slot} out of range")));
        }
        let expected = match segments.modality {
            Modality::Text => sample.text_tokens.len(),
            Modality::Image => IMAGE_SIDE * IMAGE_SIDE,
        };
        if segments.n_features != expected {
            return Err(Error::Shape(format!("partition over {} features, input has {expected}", segments.n_features)));
        }
        let ctx = encode_context(&sample.text_tokens, &sample.images[..], state)?;
        let fixed = match segments.modality {
            Modality::Text => ctx.image,
            Modality::Image => ctx.text,
        };
        let owner = segments.owner();
        Ok(Self { state, sample, sentiment, target, segments, owner, slot, fixed })
    }

    pub fn segments(&self) -> &SegmentedInput {
        &self.segments
    }
}

impl CoalitionGame for SentimentMarginGame<'_> {
    fn n_players(&self) -> usize {
        self.segments.k()
    }

    fn value(&self, coalition: &[bool]) -> Result<f64> {
        let cfg = &self.state.config;
        let mut drop = Dropout::disabled();
        let mut g = Graph::new(&self.state.params);
        let fixed = g.constant(self.fixed.clone());
        let ctx = match self.segments.modality {
            Modality::Text => {
                let tokens: Vec<usize> = self
                    .sample
                    .text_tokens
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| if coalition[self.owner[i]] { t } else { PAD })
                    .collect();
                (encode_text_graph(&mut g, &tokens, cfg, &mut drop)?, fixed)
            }
            Modality::Image => {
                let mut images: Vec<ImageTensor> = self.sample.images.to_vec();
                images[self.slot] = images[self.slot].masked(|r, c| coalition[self.owner[r * IMAGE_SIDE + c]]);
                (fixed, encode_images_graph(&mut g, &images, cfg, &mut drop)?)
            }
        };
        let t = self.target;
        let h = fused_hidden_graph(&mut g, &t[..t.len() - 1], ctx, cfg, &mut drop)?;
        let wanted = logits_graph(&mut g, h, &self.state.masks, Some(self.sentiment))?;
        let other = logits_graph(&mut g, h, &self.state.masks, Some(self.sentiment.opposite()))?;
        let ce_wanted = g.cross_entropy(wanted, &t[1..])?;
        let ce_other = g.cross_entropy(other, &t[1..])?;
        Ok(g.value(ce_other).get(0, 0) - g.value(ce_wanted).get(0, 0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub modality: Modality,
    pub k: usize,
    pub sentiment: Sentiment,
    pub post_id: String,
    pub feedback: String,
    /// Input words (text) in feature order; empty for images.
    pub words: Vec<String>,
    pub image_slot: Option<usize>,
    pub grid_side: Option<usize>,
    pub segments: Vec<Vec<usize>>,
    /// Raw Shapley value of each segment.
    pub shapley: Vec<f64>,
    /// Segment values divided by k.
    pub kaap: Vec<f64>,
    /// `kaap` spread evenly over each segment's features.
    pub feature_values: Vec<f64>,
    pub exact: bool,
    pub full_value: f64,
    pub empty_value: f64,
    pub additivity_residual: f64,
}

/// Top beam for the requested sentiment, as `BOS .. EOS`.
pub fn explained_generation(
    state: &ModelState,
    sample: &Sample,
    sentiment: Sentiment,
    beam: &BeamOptions,
) -> Result<Vec<usize>> {
    let beams = beam_search_generate(state, &sample.text_tokens, &sample.images[..], Some(sentiment), beam)?;
    let best = beams.first().ok_or_else(|| Error::InvalidArgument("beam search produced no hypothesis".into()))?;
    let mut target = Vec::with_capacity(best.tokens.len() + 1);
    target.push(BOS);
    target.extend(&best.tokens);
    Ok(target)
}

pub fn kaap_attribution(
    state: &ModelState,
    sample: &Sample,
    sentiment: Sentiment,
    modality: Modality,
    opts: &AttributionOptions,
) -> Result<AttributionMap> {
    if !state.is_trained() {
        return Err(Error::Untrained);
    }
    let target = explained_generation(state, sample, sentiment, &opts.beam)?;
    attribute_target(state, sample, sentiment, modality, opts.k, opts.image_slot, &target)
}

/// Attribution of an already generated `target`.
pub fn attribute_target(
    state: &ModelState,
    sample: &Sample,
    sentiment: Sentiment,
    modality: Modality,
    k: usize,
    image_slot: usize,
    target: &[usize],
) -> Result<AttributionMap> {
    let n = match modality {
        Modality::Text => sample.text_tokens.len(),
        Modality::Image => IMAGE_SIDE * IMAGE_SIDE,
    };
    let segments = partition_features(n, k, modality)?;
    let game = SentimentMarginGame::new(state, sample, sentiment, target, segments, image_slot)?;
    let (shapley, exact) = shapley_auto(&game)?;
    if shapley.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite attribution".into()));
    }
    let full_value = game.value(&vec![true; k])?;
    let empty_value = game.value(&vec![false; k])?;
    let additivity_residual = verify_additivity(&shapley, &game)?;
    let kaap: Vec<f64> = shapley.iter().map(|v| v / k as f64).collect();
    let feature_values = game.segments().per_feature(&kaap)?;
    let vocab = &state.vocabulary;
    let words = match modality {
        Modality::Text => sample.text_tokens.iter().map(|&t| vocab.word(t).unwrap_or("<unk>").to_string()).collect(),
        Modality::Image => Vec::new(),
    };
    Ok(AttributionMap {
        modality,
        k,
        sentiment,
        post_id: sample.post_id.clone(),
        feedback: vocab.detokenize(target),
        words,
        image_slot: (modality == Modality::Image).then_some(image_slot),
        grid_side: game.segments().grid_side,
        segments: game.segments().segments.clone(),
        shapley,
        kaap,
        feature_values,
        exact,
        full_value,
        empty_value,
        additivity_residual,
    })
}

/// k selection for the trained model, explaining each sample's generation
/// under its own ground-truth sentiment. The upper end of `k_range` is
/// clipped to the smallest feature count among the samples.
pub fn select_k_by_dice(
    state: &ModelState,
    samples: &[Sample],
    modality: Modality,
    k_range: RangeInclusive<usize>,
    opts: &AttributionOptions,
) -> Result<KSelection> {
    if !state.is_trained() {
        return Err(Error::Untrained);
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let n_min = match modality {
        Modality::Text => samples.iter().map(|s| s.text_tokens.len()).min().unwrap_or(0),
        Modality::Image => IMAGE_SIDE,
    };
    let hi = (*k_range.end()).min(n_min);
    if hi < *k_range.end() {
        log::warn!("k range clipped to {hi}: a sample has only {n_min} features");
    }
    let targets: Vec<Vec<usize>> =
        samples.iter().map(|s| explained_generation(state, s, s.sentiment, &opts.beam)).collect::<Result<_>>()?;
    select_k_with(*k_range.start()..=hi, samples.len(), |i, k| {
        let s = &samples[i];
        Ok(attribute_target(state, s, s.sentiment, modality, k, opts.image_slot, &targets[i])?.feature_values)
    })
}

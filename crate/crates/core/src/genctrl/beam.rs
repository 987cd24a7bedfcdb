use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::decoder::{encode_context, step_logits, Context};
use crate::corpus::{Sentiment, BOS, EOS, PAD, UNK};
use crate::encoders::ModelState;
use crate::error::{Error, Result};
use crate::tensor::log_softmax;

pub const DEFAULT_BEAM_SIZE: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Generated ids after BOS; ends with EOS unless the length cap was hit.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities.
    pub log_prob: f64,
    /// `log_prob` divided by the number of generated tokens.
    pub score: f64,
    /// 1 for the best beam.
    pub rank: usize,
    /// `None` when generated with the control layer disabled.
    pub sentiment: Option<Sentiment>,
}

impl GenerationResult {
    /// Tokens without the trailing EOS.
    pub fn words(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&t) if t == EOS => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Anything that scores the next token given a prefix.
pub trait StepModel {
    /// Log-probabilities over the vocabulary. `f64::NEG_INFINITY` marks a
    /// token that may not be generated.
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamOptions {
    pub beam_size: usize,
    /// Cap on generated tokens, EOS included.
    pub max_len: usize,
    pub bos: usize,
    pub eos: usize,
}

impl Default for BeamOptions {
    fn default() -> Self {
        Self { beam_size: DEFAULT_BEAM_SIZE, max_len: 17, bos: BOS, eos: EOS }
    }
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
}

impl Hypothesis {
    fn score(&self) -> f64 {
        self.log_prob / self.tokens.len() as f64
    }
}

/// Best score first; equal scores fall back to the token sequence so the
/// order never depends on expansion order.
fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score().total_cmp(&a.score()).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Length-normalized beam search. Each step expands every live hypothesis
/// by every token and keeps the best `beam_size` expansions; expansions
/// ending in EOS leave the beam as finished. Returns up to `beam_size`
/// results ranked by normalized score.
pub fn beam_search(model: &dyn StepModel, opts: &BeamOptions) -> Result<Vec<GenerationResult>> {
    if opts.beam_size == 0 {
        return Err(Error::InvalidArgument("beam_size must be at least 1".into()));
    }
    if opts.max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut live = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut prefix = Vec::with_capacity(opts.max_len + 1);
    for _ in 0..opts.max_len {
        let mut expansions = Vec::new();
        for hyp in &live {
            prefix.clear();
            prefix.push(opts.bos);
            prefix.extend(&hyp.tokens);
            let logp = model.next_log_probs(&prefix)?;
            for (tok, &lp) in logp.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                if lp.is_nan() {
                    return Err(Error::InvalidArgument(format!("NaN log-probability for token {tok}")));
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                expansions.push(Hypothesis { tokens, log_prob: hyp.log_prob + lp });
            }
        }
        expansions.sort_by(by_score);
        expansions.truncate(opts.beam_size);
        live.clear();
        for h in expansions {
            if h.tokens.last() == Some(&opts.eos) {
                finished.push(h);
            } else {
                live.push(h);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    finished.extend(live);
    finished.sort_by(by_score);
    finished.truncate(opts.beam_size);
    Ok(finished
        .into_iter()
        .enumerate()
        .map(|(i, h)| GenerationResult {
            score: h.score(),
            log_prob: h.log_prob,
            tokens: h.tokens,
            rank: i + 1,
            sentiment: None,
        })
        .collect())
}

/// Repeatedly takes the most likely token; ties go to the smaller id.
pub fn greedy_decode(model: &dyn StepModel, opts: &BeamOptions) -> Result<GenerationResult> {
    let mut prefix = vec![opts.bos];
    let mut log_prob = 0.0;
    for _ in 0..opts.max_len {
        let logp = model.next_log_probs(&prefix)?;
        let (tok, lp) = logp
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, lp)| *lp != f64::NEG_INFINITY)
            .fold(None, |best: Option<(usize, f64)>, (t, lp)| match best {
                Some((_, b)) if b >= lp => best,
                _ => Some((t, lp)),
            })
            .ok_or_else(|| Error::InvalidArgument("no token can be generated".into()))?;
        prefix.push(tok);
        log_prob += lp;
        if tok == opts.eos {
            break;
        }
    }
    let tokens = prefix[1..].to_vec();
    Ok(GenerationResult { score: log_prob / tokens.len() as f64, log_prob, tokens, rank: 1, sentiment: None })
}

/// A trained model conditioned on one encoded input.
pub struct ModelStepper<'a> {
    pub state: &'a ModelState,
    pub context: Context,
    pub sentiment: Option<Sentiment>,
}

impl<'a> ModelStepper<'a> {
    pub fn new(
        state: &'a ModelState,
        text_tokens: &[usize],
        images: &[crate::corpus::ImageTensor],
        sentiment: Option<Sentiment>,
    ) -> Result<Self> {
        Ok(Self { state, context: encode_context(text_tokens, images, state)?, sentiment })
    }
}

impl StepModel for ModelStepper<'_> {
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let logits = step_logits(prefix, &self.context, self.state, &self.state.masks, self.sentiment)?;
        let mut lp = log_softmax(&logits.data);
        for banned in [PAD, BOS, UNK] {
            lp[banned] = f64::NEG_INFINITY;
        }
        Ok(lp)
    }
}

/// Beam search over a trained model. `sentiment = None` disables the
/// control layer.
pub fn beam_search_generate(
    state: &ModelState,
    text_tokens: &[usize],
    images: &[crate::corpus::ImageTensor],
    sentiment: Option<Sentiment>,
    opts: &BeamOptions,
) -> Result<Vec<GenerationResult>> {
    let stepper = ModelStepper::new(state, text_tokens, images, sentiment)?;
    let mut beams = beam_search(&stepper, opts)?;
    beams.iter_mut().for_each(|b| b.sentiment = sentiment);
    Ok(beams)
}

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decoder::{encode_graph, fused_hidden_graph, logits_graph};
use crate::autodiff::{add_gradients, Gradients, Graph, Var};
use crate::corpus::{Sample, Sentiment};
use crate::encoders::{Dropout, ModelState};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Route each sample through the mask of its own label. Off trains the
    /// control layer as a plain pass-through.
    pub controlled: bool,
    /// Rescale each batch gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    pub fold: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 60, batch_size: 16, learning_rate: 1e-3, seed: 0, controlled: true, clip_norm: None, fold: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub fold: Option<usize>,
    pub seed: u64,
    pub samples: usize,
    pub steps: u64,
    pub wall_clock_secs: f64,
}

/// Teacher-forced cross-entropy of one sample: the decoder reads
/// `BOS w1 .. wn` and predicts `w1 .. wn EOS`.
pub(crate) fn sample_loss_graph(
    g: &mut Graph<'_>,
    state: &ModelState,
    sample: &Sample,
    control: Option<Sentiment>,
    drop: &mut Dropout,
) -> Result<Var> {
    let t = &sample.target_tokens;
    if t.len() < 2 {
        return Err(Error::InvalidArgument("target needs at least BOS and EOS".into()));
    }
    let ctx = encode_graph(g, &sample.text_tokens, &sample.images[..], &state.config, drop)?;
    let h = fused_hidden_graph(g, &t[..t.len() - 1], ctx, &state.config, drop)?;
    let logits = logits_graph(g, h, &state.masks, control)?;
    g.cross_entropy(logits, &t[1..])
}

/// Loss and parameter gradients for one sample, dropout off.
pub fn sample_loss(state: &ModelState, sample: &Sample, control: Option<Sentiment>) -> Result<(f64, Gradients)> {
    loss_and_grad(state, sample, control, &mut Dropout::disabled())
}

/// Softmax weights recorded during one teacher-forced pass, dropout off.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    /// Decoder self-attention, one matrix per head and layer.
    pub causal: Vec<Matrix>,
    /// Encoder self-attention and decoder cross-attention.
    pub bidirectional: Vec<Matrix>,
}

pub fn attention_trace(state: &ModelState, sample: &Sample, control: Option<Sentiment>) -> Result<AttentionTrace> {
    let mut g = Graph::new(&state.params);
    sample_loss_graph(&mut g, state, sample, control, &mut Dropout::disabled())?;
    let grab = |causal| g.softmax_outputs(causal).into_iter().cloned().collect();
    Ok(AttentionTrace { causal: grab(true), bidirectional: grab(false) })
}

fn loss_and_grad(
    state: &ModelState,
    sample: &Sample,
    control: Option<Sentiment>,
    drop: &mut Dropout,
) -> Result<(f64, Gradients)> {
    let mut g = Graph::new(&state.params);
    let loss = sample_loss_graph(&mut g, state, sample, control, drop)?;
    let value = g.value(loss).get(0, 0);
    Ok((value, g.backward(loss)))
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(state: &ModelState) -> Self {
        let zeros: Vec<Matrix> = state.params.iter().map(|(_, _, m)| Matrix::zeros(m.rows, m.cols)).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, state: &mut ModelState, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (id, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let p = state.params.get_mut(id);
            for i in 0..g.data.len() {
                m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * g.data[i];
                v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * g.data[i] * g.data[i];
                p.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Adam over shuffled mini-batches. Per-sample gradients may be computed in
/// parallel; they are always summed in batch order.
pub fn train(state: &mut ModelState, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no labelled samples to train on".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
    }
    let start = Instant::now();
    let mut adam = Adam::new(state);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let frozen: &ModelState = state;
            let results: Vec<Result<(f64, Gradients)>> = batch
                .par_iter()
                .map(|&i| {
                    let sample = &samples[i];
                    let control = cfg.controlled.then_some(sample.sentiment);
                    let seed = mix(mix(cfg.seed, epoch as u64), i as u64);
                    loss_and_grad(frozen, sample, control, &mut Dropout::new(frozen.config.dropout, seed))
                })
                .collect();
            let mut sum: Gradients = (0..state.params.len()).map(|_| None).collect();
            for r in results {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, losses: epoch_losses });
                }
                total += loss;
                add_gradients(&mut sum, grads);
            }
            let scale = 1.0 / batch.len() as f64;
            let mut norm2 = 0.0;
            for g in sum.iter_mut().flatten() {
                g.data.iter_mut().for_each(|v| *v *= scale);
                norm2 += g.data.iter().map(|v| v * v).sum::<f64>();
            }
            if let Some(max) = cfg.clip_norm {
                let norm = norm2.sqrt();
                if norm > max {
                    let s = max / norm;
                    sum.iter_mut().flatten().for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
                }
            }
            adam.step(state, &sum, cfg.learning_rate);
            steps += 1;
        }
        let mean = total / samples.len() as f64;
        if !mean.is_finite() || state.params.iter().any(|(_, _, m)| !m.is_finite()) {
            return Err(Error::Diverged { epoch, losses: epoch_losses });
        }
        log::info!("epoch {} loss {mean:.4}", epoch + 1);
        epoch_losses.push(mean);
    }
    state.trained_steps += steps;
    Ok(TrainReport {
        epoch_losses,
        fold: cfg.fold,
        seed: cfg.seed,
        samples: samples.len(),
        steps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

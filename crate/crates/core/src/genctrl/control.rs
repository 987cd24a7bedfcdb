use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentiment;
use crate::error::{Error, Result};

/// A pair of binary masks with disjoint zero-sets of equal size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlMasks {
    pub mask_neg: Vec<u8>,
    pub mask_pos: Vec<u8>,
    pub x_percent: f64,
}

impl ControlMasks {
    pub fn all_ones(d: usize) -> Self {
        Self { mask_neg: vec![1; d], mask_pos: vec![1; d], x_percent: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.mask_neg.len()
    }

    pub fn mask(&self, sentiment: Sentiment) -> &[u8] {
        match sentiment {
            Sentiment::Negative => &self.mask_neg,
            Sentiment::Positive => &self.mask_pos,
        }
    }

    pub fn zero_set(&self, sentiment: Sentiment) -> Vec<usize> {
        self.mask(sentiment).iter().enumerate().filter(|(_, &m)| m == 0).map(|(i, _)| i).collect()
    }

    pub(crate) fn as_f64(&self, sentiment: Sentiment) -> Vec<f64> {
        self.mask(sentiment).iter().map(|&m| f64::from(m)).collect()
    }
}

/// Zeros per mask for width `d`: `round(x * d / 100)`.
pub fn zeros_per_mask(d: usize, x_percent: f64) -> usize {
    (x_percent * d as f64 / 100.0).round() as usize
}

pub fn build_control_masks(d: usize, x_percent: f64, seed: u64) -> Result<ControlMasks> {
    if !(0.0..=100.0).contains(&x_percent) {
        return Err(Error::InvalidArgument(format!("x_percent {x_percent} outside [0, 100]")));
    }
    let n = zeros_per_mask(d, x_percent);
    if 2 * n > d {
        return Err(Error::InvalidArgument(format!(
            "x = {x_percent}% leaves no room for two disjoint sets of {n} in {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, d, 2 * n).into_vec();
    let mut masks = ControlMasks { x_percent, ..ControlMasks::all_ones(d) };
    for &i in &picked[..n] {
        masks.mask_neg[i] = 0;
    }
    for &i in &picked[n..] {
        masks.mask_pos[i] = 0;
    }
    Ok(masks)
}

/// Elementwise product with the mask for `sentiment`.
pub fn apply_control(input: &[f64], sentiment: Sentiment, masks: &ControlMasks) -> Result<Vec<f64>> {
    if input.len() != masks.dim() {
        return Err(Error::Shape(format!("control input width {} vs mask width {}", input.len(), masks.dim())));
    }
    Ok(input.iter().zip(masks.mask(sentiment)).map(|(v, &m)| v * f64::from(m)).collect())
}

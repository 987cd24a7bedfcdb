use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convergence level for adjacent-k agreement.
pub const DICE_CONVERGENCE: f64 = 0.95;
pub const THRESHOLD_QUANTILE: f64 = 0.75;

/// `2|A ∩ B| / (|A| + |B|)`; two empty masks count as identical.
pub fn dice_coefficient(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("masks of length {} and {}", a.len(), b.len())));
    }
    let both = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / total as f64)
}

/// Top-quartile mask: `|v| >= t` where `t` is the nearest-rank 75th
/// percentile of `|v|`. Zero attributions never enter the mask.
pub fn top_quartile_mask(values: &[f64]) -> Vec<bool> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let rank = ((THRESHOLD_QUANTILE * abs.len() as f64).ceil() as usize).max(1);
    let t = abs[rank - 1];
    values.iter().map(|v| v.abs() >= t && v.abs() > 0.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    pub converged: bool,
    /// `(k, mean dice(map_k, map_{k+1}))` for every k tried.
    pub curve: Vec<(usize, f64)>,
}

/// Smallest `k` whose map agrees with the `k + 1` map at
/// [`DICE_CONVERGENCE`] or better, averaged over `n_samples`. `map_for(i, k)`
/// returns the per-feature attribution of sample `i` at `k`; maps of one
/// sample must share a length across k.
pub fn select_k_with<F>(k_range: RangeInclusive<usize>, n_samples: usize, map_for: F) -> Result<KSelection>
where
    F: Fn(usize, usize) -> Result<Vec<f64>> + Sync,
{
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi <= lo {
        return Err(Error::InvalidArgument(format!("k range {lo}..={hi} needs 2 <= start < end")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut curve = Vec::new();
    let mut prev: Option<Vec<Vec<bool>>> = None;
    for k in lo..=hi {
        let masks: Vec<Vec<bool>> =
            (0..n_samples).into_par_iter().map(|i| Ok(top_quartile_mask(&map_for(i, k)?))).collect::<Result<_>>()?;
        if let Some(p) = &prev {
            let mut sum = 0.0;
            for (a, b) in p.iter().zip(&masks) {
                sum += dice_coefficient(a, b)?;
            }
            let mean = sum / n_samples as f64;
            curve.push((k - 1, mean));
            if mean >= DICE_CONVERGENCE {
                return Ok(KSelection { k: k - 1, converged: true, curve });
            }
        }
        prev = Some(masks);
    }
    log::warn!("attribution maps did not converge for k in {lo}..={hi}; using k = {hi}");
    Ok(KSelection { k: hi, converged: false, curve })
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Text => "text",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            other => Err(Error::InvalidArgument(format!("unknown modality `{other}` (image or text)"))),
        }
    }
}

/// A k-way partition of atomic features. Text features are token positions;
/// image features are pixel locations of a square grid in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentedInput {
    pub modality: Modality,
    pub n_features: usize,
    pub segments: Vec<Vec<usize>>,
    /// Side of the pixel grid, images only.
    pub grid_side: Option<usize>,
}

impl SegmentedInput {
    pub fn k(&self) -> usize {
        self.segments.len()
    }

    /// Segment index of every feature.
    pub fn owner(&self) -> Vec<usize> {
        let mut owner = vec![0; self.n_features];
        for (s, seg) in self.segments.iter().enumerate() {
            for &f in seg {
                owner[f] = s;
            }
        }
        owner
    }

    /// Spreads each segment value evenly over its features.
    pub fn per_feature(&self, segment_values: &[f64]) -> Result<Vec<f64>> {
        if segment_values.len() != self.k() {
            return Err(Error::Shape(format!("{} values for {} segments", segment_values.len(), self.k())));
        }
        let mut out = vec![0.0; self.n_features];
        for (seg, &v) in self.segments.iter().zip(segment_values) {
            for &f in seg {
                out[f] = v / seg.len() as f64;
            }
        }
        Ok(out)
    }
}

/// Sizes of `k` contiguous runs covering `n`, larger runs first.
pub fn run_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Text: contiguous word runs. Image: the grid is cut into a `k x k` block
/// grid and each row of blocks (a horizontal band) is one segment, so band
/// heights follow the same remainder rule as word runs.
pub fn partition_features(n_features: usize, k: usize, modality: Modality) -> Result<SegmentedInput> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > n_features {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds {n_features} features")));
    }
    match modality {
        Modality::Text => {
            let mut start = 0;
            let segments = run_sizes(n_features, k)
                .into_iter()
                .map(|len| {
                    let seg: Vec<usize> = (start..start + len).collect();
                    start += len;
                    seg
                })
                .collect();
            Ok(SegmentedInput { modality, n_features, segments, grid_side: None })
        }
        Modality::Image => {
            let side = (n_features as f64).sqrt().round() as usize;
            if side * side != n_features {
                return Err(Error::Shape(format!("{n_features} pixels do not form a square grid")));
            }
            if k > side {
                return Err(Error::InvalidArgument(format!("k = {k} exceeds the {side} pixel rows")));
            }
            let mut row = 0;
            let segments = run_sizes(side, k)
                .into_iter()
                .map(|h| {
                    let seg: Vec<usize> = (row * side..(row + h) * side).collect();
                    row += h;
                    seg
                })
                .collect();
            Ok(SegmentedInput { modality, n_features, segments, grid_side: Some(side) })
        }
    }
}

//! Plug-in surface for an external region detector.

use serde::{Deserialize, Serialize};

use super::VisualContext;
use crate::corpus::ImageTensor;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const POSITIVE_IOU: f64 = 0.7;
pub const NEGATIVE_IOU: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objectness {
    Positive,
    Negative,
    NoScore,
}

/// Both bounds fall in `NoScore`.
pub fn objectness_score(iou: f64) -> Result<Objectness> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(Error::InvalidArgument(format!("IoU {iou} outside [0, 1]")));
    }
    Ok(if iou > POSITIVE_IOU {
        Objectness::Positive
    } else if iou < NEGATIVE_IOU {
        Objectness::Negative
    } else {
        Objectness::NoScore
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    /// `[x0, y0, x1, y1]`, normalized to the image side.
    pub bbox: [f64; 4],
    pub iou_with_anchor: f64,
    pub feature: Vec<f64>,
}

impl RegionProposal {
    pub fn new(bbox: [f64; 4], iou_with_anchor: f64, feature: Vec<f64>) -> Result<Self> {
        if bbox.iter().any(|v| !(0.0..=1.0).contains(v)) || bbox[0] > bbox[2] || bbox[1] > bbox[3] {
            return Err(Error::InvalidArgument(format!("box {bbox:?} is not a corner pair inside [0, 1]^2")));
        }
        objectness_score(iou_with_anchor)?;
        Ok(Self { bbox, iou_with_anchor, feature })
    }
}

/// A region detector, e.g. a wrapper around pretrained detector weights.
pub trait RegionProposer: Sync {
    fn propose(&self, image: &ImageTensor) -> Result<Vec<RegionProposal>>;
}

/// Maps detector features to `d_model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalProjection {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Projects the Positive proposals of every image, in slot order. An image
/// whose proposals include no Positive one contributes the mean of all its
/// proposal features instead. Images without proposals contribute nothing.
pub fn encode_proposals(per_image: &[Vec<RegionProposal>], proj: &ProposalProjection) -> Result<VisualContext> {
    let dim = proj.weight.rows;
    if proj.bias.shape() != (1, proj.weight.cols) {
        return Err(Error::Shape("projection bias must be one row of the output width".into()));
    }
    let mut rows = Vec::new();
    for proposals in per_image {
        if proposals.iter().any(|p| p.feature.len() != dim) {
            return Err(Error::Shape(format!("proposal features must have width {dim}")));
        }
        let mut positive = Vec::new();
        for p in proposals {
            if objectness_score(p.iou_with_anchor)? == Objectness::Positive {
                positive.push(p.feature.clone());
            }
        }
        if positive.is_empty() && !proposals.is_empty() {
            let mut pooled = vec![0.0; dim];
            for p in proposals {
                pooled.iter_mut().zip(&p.feature).for_each(|(a, b)| *a += b);
            }
            pooled.iter_mut().for_each(|a| *a /= proposals.len() as f64);
            positive.push(pooled);
        }
        rows.extend(positive);
    }
    if rows.is_empty() {
        return Ok(VisualContext { z_i_star: Matrix::zeros(0, proj.weight.cols) });
    }
    let mut z = Matrix::from_rows(&rows).matmul(&proj.weight)?;
    for r in 0..z.rows {
        z.row_mut(r).iter_mut().zip(proj.bias.row(0)).for_each(|(a, b)| *a += b);
    }
    Ok(VisualContext { z_i_star: z })
}

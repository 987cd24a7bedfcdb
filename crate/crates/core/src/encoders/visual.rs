use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{linear_graph, register_linear, uniform};
use super::{Dropout, ModelConfig, ModelState};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::corpus::{ImageTensor, IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SLOTS};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Kernel size and stride of the patch convolution.
pub const CONV_STRIDE: usize = 8;
const KERNEL_LEN: usize = CONV_STRIDE * CONV_STRIDE * IMAGE_CHANNELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualContext {
    /// Region rows of slot 0, then slot 1, then slot 2.
    pub z_i_star: Matrix,
}

pub(crate) fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    store.insert("vis.conv", uniform(KERNEL_LEN, cfg.conv_channels, KERNEL_LEN, rng));
    register_linear(store, "vis.proj", cfg.region_feature_dim(), cfg.d_model, rng);
    store.insert("vis.region", uniform(cfg.regions_per_image(), cfg.d_model, cfg.d_model, rng));
}

/// Convolution windows of one image, one row per window. Rows are grouped
/// by region so that a row-major reshape yields one row per region.
fn im2col(image: &ImageTensor, grid: usize, out: &mut [f64]) {
    let cells = IMAGE_SIDE / CONV_STRIDE;
    let per = cells / grid;
    let mut row = 0;
    for ry in 0..grid {
        for rx in 0..grid {
            for py in 0..per {
                for px in 0..per {
                    let (cy, cx) = ((ry * per + py) * CONV_STRIDE, (rx * per + px) * CONV_STRIDE);
                    let dst = &mut out[row * KERNEL_LEN..(row + 1) * KERNEL_LEN];
                    let mut i = 0;
                    for ky in 0..CONV_STRIDE {
                        for kx in 0..CONV_STRIDE {
                            for ch in 0..IMAGE_CHANNELS {
                                dst[i] = f64::from(image.at(cy + ky, cx + kx, ch));
                                i += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn encode_images_graph(
    g: &mut Graph<'_>,
    images: &[ImageTensor],
    cfg: &ModelConfig,
    drop: &mut Dropout,
) -> Result<Var> {
    if images.len() != IMAGE_SLOTS {
        return Err(Error::InvalidArgument(format!("expected {IMAGE_SLOTS} image slots, got {}", images.len())));
    }
    for img in images {
        if img.data().len() != ImageTensor::LEN {
            return Err(Error::Shape(format!("image is not {IMAGE_SIDE}x{IMAGE_SIDE}x{IMAGE_CHANNELS}")));
        }
    }
    let windows = (IMAGE_SIDE / CONV_STRIDE).pow(2);
    let mut cols = Matrix::zeros(IMAGE_SLOTS * windows, KERNEL_LEN);
    for (s, img) in images.iter().enumerate() {
        // blank slots stay zero, and so do their features
        if !img.is_blank() {
            let block = &mut cols.data[s * windows * KERNEL_LEN..(s + 1) * windows * KERNEL_LEN];
            im2col(img, cfg.patch_grid, block);
        }
    }
    let cols = g.constant(cols);
    let kernel = g.param_named("vis.conv");
    let conv = g.matmul(cols, kernel)?;
    let conv = g.relu(conv);
    let regions = IMAGE_SLOTS * cfg.regions_per_image();
    let features = g.reshape(conv, regions, cfg.region_feature_dim())?;
    let z = linear_graph(g, features, "vis.proj")?;
    let pos = g.param_named("vis.region");
    let pos = g.concat_rows(&[pos; IMAGE_SLOTS])?;
    let z = g.add(z, pos)?;
    drop.apply(g, z)
}

pub fn encode_images(images: &[ImageTensor], state: &ModelState) -> Result<VisualContext> {
    let mut g = Graph::new(&state.params);
    let z = encode_images_graph(&mut g, images, &state.config, &mut Dropout::disabled())?;
    Ok(VisualContext { z_i_star: g.value(z).clone() })
}

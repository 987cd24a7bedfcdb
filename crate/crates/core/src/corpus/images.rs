use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::RgbImage;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 128;
pub const IMAGE_CHANNELS: usize = 3;

/// A `128 x 128 x 3` image in row-major HWC order with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Vec<f32>,
}

impl ImageTensor {
    pub const LEN: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;

    pub fn blank() -> Self {
        Self { data: vec![0.0; Self::LEN] }
    }

    pub fn from_data(data: Vec<f32>) -> Result<Self> {
        if data.len() != Self::LEN {
            return Err(Error::Shape(format!(
                "image tensor needs {} values, got {} (resize to {IMAGE_SIDE}x{IMAGE_SIDE} first)",
                Self::LEN,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("image values must lie in [0, 1]".into()));
        }
        Ok(Self { data })
    }

    /// Resizes to `128 x 128` when needed and scales bytes into `[0, 1]`.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let resized;
        let img = if img.width() as usize == IMAGE_SIDE && img.height() as usize == IMAGE_SIDE {
            img
        } else {
            resized = image::imageops::resize(img, IMAGE_SIDE as u32, IMAGE_SIDE as u32, FilterType::Triangle);
            &resized
        };
        Self { data: img.as_raw().iter().map(|&b| f32::from(b) / 255.0).collect() }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * IMAGE_SIDE + col) * IMAGE_CHANNELS + channel]
    }

    /// Zeroes every pixel for which `keep(row, col)` is false.
    pub fn masked(&self, keep: impl Fn(usize, usize) -> bool) -> ImageTensor {
        let mut data = self.data.clone();
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                if !keep(r, c) {
                    let base = (r * IMAGE_SIDE + c) * IMAGE_CHANNELS;
                    data[base..base + IMAGE_CHANNELS].fill(0.0);
                }
            }
        }
        ImageTensor { data }
    }
}

/// Resolves an image reference from a post into pixels.
pub trait ImageSource: Sync {
    fn load(&self, reference: &str) -> Result<ImageTensor>;
}

/// Reads raster files relative to a root directory.
#[derive(Clone, Debug)]
pub struct FsImageSource {
    root: PathBuf,
}

impl FsImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn resolve(&self, reference: &str) -> PathBuf {
        let p = Path::new(reference);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

impl ImageSource for FsImageSource {
    fn load(&self, reference: &str) -> Result<ImageTensor> {
        let img = image::open(self.resolve(reference))?;
        Ok(ImageTensor::from_rgb(&img.to_rgb8()))
    }
}

/// In-memory images keyed by reference, as produced by the synthetic generator.
#[derive(Clone, Debug, Default)]
pub struct MemoryImageSource {
    pub images: BTreeMap<String, RgbImage>,
}

impl ImageSource for MemoryImageSource {
    fn load(&self, reference: &str) -> Result<ImageTensor> {
        self.images
            .get(reference)
            .map(ImageTensor::from_rgb)
            .ok_or_else(|| Error::InvalidArgument(format!("no image registered under `{reference}`")))
    }
}

//! Synthetic datasets, augmentation and image/mask files.

pub mod augment;
pub mod dataset;
pub mod pgm;
pub mod synth;

pub use augment::{AugmentParams, AugmentSpec};
pub use dataset::{Dataset, Split};
pub use synth::{ShapeKind, SynthSpec};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::{Element, Tensor};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "image {height}×{width} needs {} values, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// 8-bit samples `round(255·clamp(v, 0, 1))`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Snaps every value to the nearest 8-bit level, so a write/read cycle is lossless.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: self.to_bytes().into_iter().map(|b| f64::from(b) / 255.0).collect(),
        }
    }

    /// `1×1×H×W` tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 1, self.height, self.width], |i| T::of(self.pixels[i]))
    }
}

pub fn mask_to_tensor<T: Element>(mask: &BinaryMask) -> Tensor<T> {
    Tensor::from_fn([1, 1, mask.height(), mask.width()], |i| T::of(f64::from(mask.pixels()[i])))
}

/// Generator parameters recorded for one sample.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleMeta {
    pub shape: ShapeKind,
    pub target_fraction: f64,
    pub blur_sigma: f64,
    pub intensity_offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub meta: Option<SampleMeta>,
}

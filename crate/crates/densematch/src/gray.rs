//! Grayscale image buffer shared by the I/O, matching and refinement stages.
//!
//! Pixels are stored as `f32` in display units (0-255). The matcher's guided
//! filter consumes these raw intensities; the feature network instead takes
//! the standardized tensor produced by [`GrayImage::to_standardized_tensor`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Luminance weights for RGB conversion.
pub(crate) const LUMA_R: f32 = 0.299;
pub(crate) const LUMA_G: f32 = 0.587;
pub(crate) const LUMA_B: f32 = 0.114;

/// Row-major single-channel f32 image, intensities nominally 0-255.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<GrayImage> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Shape(format!(
                "image {width}×{height} does not match buffer of {} pixels",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> GrayImage {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Converts interleaved RGB8 samples with the classic luminance weights
    /// 0.299/0.587/0.114.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<GrayImage> {
        if rgb.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "RGB buffer of {} bytes does not match {width}×{height}",
                rgb.len()
            )));
        }
        let data = rgb
            .chunks_exact(3)
            .map(|px| LUMA_R * px[0] as f32 + LUMA_G * px[1] as f32 + LUMA_B * px[2] as f32)
            .collect();
        GrayImage::new(width, height, data)
    }

    pub fn from_luma8(width: usize, height: usize, luma: &[u8]) -> Result<GrayImage> {
        if luma.len() != width * height {
            return Err(Error::Shape(format!(
                "luma buffer of {} bytes does not match {width}×{height}",
                luma.len()
            )));
        }
        GrayImage::new(width, height, luma.iter().map(|v| *v as f32).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    /// Zero-mean, unit-variance copy of the image as a `[1, 1, H, W]` tensor,
    /// the network's expected input. Constant images standardize to all
    /// zeros instead of dividing by a vanishing deviation.
    pub fn to_standardized_tensor(&self) -> Tensor {
        let n = self.data.len() as f64;
        let mut sum = 0.0f64;
        for v in &self.data {
            sum += *v as f64;
        }
        let mean = sum / n;
        let mut var = 0.0f64;
        for v in &self.data {
            let d = *v as f64 - mean;
            var += d * d;
        }
        let std = (var / n).sqrt();
        let scale = if std < 1e-12 { 0.0 } else { 1.0 / std };
        let data: Vec<f32> = self
            .data
            .iter()
            .map(|v| ((*v as f64 - mean) * scale) as f32)
            .collect();
        Tensor::new(&[1, 1, self.height, self.width], data).expect("shape matches buffer")
    }
}

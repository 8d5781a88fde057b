//! Seeded synthetic stereo pairs with exactly known disparity.
//!
//! The right image is an independent noise texture and the left image is the
//! same texture shifted `disparity` pixels to the right, so every left pixel
//! at `x >= disparity` has a perfect correspondence. The band `x < disparity`
//! has no counterpart and is marked invalid in the ground truth.

use crate::error::{Error, Result};
use crate::gray::GrayImage;
use crate::matcher::{DisparityMap, INVALID_DISPARITY};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// A generated stereo pair plus its exact left-reference ground truth.
pub struct SyntheticPair {
    pub left: GrayImage,
    pub right: GrayImage,
    pub ground_truth: DisparityMap,
}

/// Builds a pair whose true disparity is `disparity` everywhere it is
/// defined. Pixel values are whole numbers in 0..=255 so the images survive
/// 8-bit round trips unchanged. The same seed always yields the same pair.
pub fn shifted_texture_pair(
    width: usize,
    height: usize,
    disparity: usize,
    seed: u64,
) -> Result<SyntheticPair> {
    if width == 0 || height == 0 {
        return Err(Error::Config(format!(
            "synthetic pair needs positive dimensions, got {width}×{height}"
        )));
    }
    if disparity >= width {
        return Err(Error::Config(format!(
            "disparity {disparity} must be smaller than width {width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut texture = vec![0.0f32; width * height];
    for v in texture.iter_mut() {
        *v = rng.random_range(0u32..256) as f32;
    }
    let right = GrayImage::new(width, height, texture.clone())?;

    let mut left = vec![0.0f32; width * height];
    let mut gt = vec![INVALID_DISPARITY; width * height];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x >= disparity {
                left[i] = texture[y * width + x - disparity];
                gt[i] = disparity as f32;
            } else {
                left[i] = rng.random_range(0u32..256) as f32;
            }
        }
    }
    Ok(SyntheticPair {
        left: GrayImage::new(width, height, left)?,
        right,
        ground_truth: DisparityMap::new(width, height, gt)?,
    })
}

//! Cost-volume construction and disparity selection.
//!
//! For every candidate disparity `d` the matcher scores the cosine
//! similarity between the left pixel's feature vector and the right pixel
//! `d` columns to the left (or mirrored, for the right-reference volume).
//! Slices are cleaned with a 5×5 spatial median and an edge-preserving
//! guided filter steered by the raw grayscale image, and the disparity with
//! the highest filtered score wins per pixel.

use crate::error::{Error, Result};
use crate::gray::GrayImage;
use crate::network::{extract_features, NetworkWeights};
use crate::tensor::conv::reflect_index;
use crate::tensor::{cosine_from_sums, Tensor};

/// Sentinel marking pixels without a usable disparity. Valid disparities are
/// never negative, so any negative value reads as invalid.
pub const INVALID_DISPARITY: f32 = -1.0;

/// Processing resolution a disparity map was produced at, carried as
/// metadata so evaluation can report it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResolutionScale {
    #[default]
    Full,
    Half,
    Quarter,
}

/// Dense per-pixel disparity estimates with an invalid sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
    scale: ResolutionScale,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<DisparityMap> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Shape(format!(
                "disparity map {width}×{height} does not match buffer of {} values",
                data.len()
            )));
        }
        Ok(DisparityMap {
            width,
            height,
            data,
            scale: ResolutionScale::Full,
        })
    }

    /// Map of the given size with every pixel invalid.
    pub fn filled_invalid(width: usize, height: usize) -> DisparityMap {
        DisparityMap {
            width,
            height,
            data: vec![INVALID_DISPARITY; width * height],
            scale: ResolutionScale::Full,
        }
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

    pub fn scale(&self) -> ResolutionScale {
        self.scale
    }

    pub fn set_scale(&mut self, scale: ResolutionScale) {
        self.scale = scale;
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    /// A pixel is valid when it holds a finite, non-negative disparity.
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        let v = self.get(x, y);
        v.is_finite() && v >= 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_finite() && **v >= 0.0).count()
    }
}

/// Which image the volume's `x` coordinate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeDirection {
    /// `values[d][y][x]` scores left pixel `(x, y)` against right `(x-d, y)`.
    LeftReference,
    /// `values[d][y][x]` scores right pixel `(x, y)` against left `(x+d, y)`.
    RightReference,
}

/// Similarity scores for every pixel and candidate disparity, stored as
/// `[d][y][x]`. Scores live in [-1, 1]; positions whose correspondence falls
/// outside the other image hold [`INVALID_DISPARITY`] (-1).
#[derive(Debug, Clone)]
pub struct CostVolume {
    direction: VolumeDirection,
    max_disparity: usize,
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl CostVolume {
    /// Builds a volume from raw `[d][y][x]` values.
    pub fn from_values(
        direction: VolumeDirection,
        max_disparity: usize,
        width: usize,
        height: usize,
        values: Vec<f32>,
    ) -> Result<CostVolume> {
        if max_disparity == 0 || width == 0 || height == 0 {
            return Err(Error::Shape("cost volume dimensions must be positive".into()));
        }
        if values.len() != max_disparity * width * height {
            return Err(Error::Shape(format!(
                "expected {} values for a {}x{}x{} volume, got {}",
                max_disparity * width * height,
                max_disparity,
                height,
                width,
                values.len()
            )));
        }
        Ok(CostVolume {
            direction,
            max_disparity,
            width,
            height,
            values,
        })
    }

    pub fn direction(&self) -> VolumeDirection {
        self.direction
    }

    /// Number of disparity hypotheses (slices).
    pub fn max_disparity(&self) -> usize {
        self.max_disparity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn at(&self, d: usize, y: usize, x: usize) -> f32 {
        self.values[(d * self.height + y) * self.width + x]
    }

    pub fn slice(&self, d: usize) -> &[f32] {
        &self.values[d * self.height * self.width..][..self.height * self.width]
    }

    fn slice_mut(&mut self, d: usize) -> &mut [f32] {
        &mut self.values[d * self.height * self.width..][..self.height * self.width]
    }
}

/// Feature tensor `[1, C, H, W]` rearranged pixel-major with per-pixel
/// squared norms, so disparity slices reduce to contiguous dot products.
struct PixelFeatures {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    norm_sq: Vec<f64>,
}

impl PixelFeatures {
    fn from_tensor(t: &Tensor) -> Result<PixelFeatures> {
        let (b, c, h, w) = t.dims4()?;
        if b != 1 {
            return Err(Error::Shape(format!(
                "cost volumes take single-image features, got batch {b}"
            )));
        }
        let plane = h * w;
        let mut data = vec![0.0f32; plane * c];
        for ci in 0..c {
            let src = &t.data()[ci * plane..(ci + 1) * plane];
            for p in 0..plane {
                data[p * c + ci] = src[p];
            }
        }
        let norm_sq = (0..plane)
            .map(|p| {
                data[p * c..(p + 1) * c]
                    .iter()
                    .map(|v| *v as f64 * *v as f64)
                    .sum()
            })
            .collect();
        Ok(PixelFeatures {
            height: h,
            width: w,
            channels: c,
            data,
            norm_sq,
        })
    }

    fn vector(&self, p: usize) -> &[f32] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        sum += *x as f64 * *y as f64;
    }
    sum
}

/// Scores every disparity hypothesis `0..max_disparity` by channel-wise
/// cosine similarity of the two feature tensors (`[1, C, H, W]` each).
pub fn build_cost_volume(
    left_features: &Tensor,
    right_features: &Tensor,
    max_disparity: usize,
    direction: VolumeDirection,
) -> Result<CostVolume> {
    if left_features.shape() != right_features.shape() {
        return Err(Error::Shape(format!(
            "feature shapes differ: {:?} vs {:?}",
            left_features.shape(),
            right_features.shape()
        )));
    }
    let left = PixelFeatures::from_tensor(left_features)?;
    let right = PixelFeatures::from_tensor(right_features)?;
    let (h, w) = (left.height, left.width);
    if max_disparity == 0 || max_disparity > w {
        return Err(Error::Config(format!(
            "max_disparity {max_disparity} must be within 1..={w} for width {w}"
        )));
    }
    let (reference, target) = match direction {
        VolumeDirection::LeftReference => (&left, &right),
        VolumeDirection::RightReference => (&right, &left),
    };
    let mut values = vec![INVALID_DISPARITY; max_disparity * h * w];
    for d in 0..max_disparity {
        let slice = &mut values[d * h * w..(d + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let other_x = match direction {
                    VolumeDirection::LeftReference => {
                        if x < d {
                            continue;
                        }
                        x - d
                    }
                    VolumeDirection::RightReference => {
                        if x + d >= w {
                            continue;
                        }
                        x + d
                    }
                };
                let p_ref = y * w + x;
                let p_tgt = y * w + other_x;
                let dot = dot_f64(reference.vector(p_ref), target.vector(p_tgt));
                slice[p_ref] =
                    cosine_from_sums(dot, reference.norm_sq[p_ref], target.norm_sq[p_tgt]);
            }
        }
    }
    Ok(CostVolume {
        direction,
        max_disparity,
        width: w,
        height: h,
        values,
    })
}

/// 5×5 median over each disparity slice independently (never across the
/// disparity axis). Borders are handled by mirroring indices back inside.
pub fn median_filter_volume(volume: &CostVolume) -> CostVolume {
    let mut out = volume.clone();
    let (h, w) = (volume.height, volume.width);
    let mut window = [0.0f32; 25];
    for d in 0..volume.max_disparity {
        let src = volume.slice(d);
        let dst = out.slice_mut(d);
        for y in 0..h {
            for x in 0..w {
                let mut k = 0;
                for dy in -2isize..=2 {
                    let sy = reflect_index(y as isize + dy, h);
                    for dx in -2isize..=2 {
                        let sx = reflect_index(x as isize + dx, w);
                        window[k] = src[sy * w + sx];
                        k += 1;
                    }
                }
                window.sort_unstable_by(f32::total_cmp);
                dst[y * w + x] = window[12];
            }
        }
    }
    out
}

/// Box mean with truncated windows: each output is the average of the
/// in-image samples within `radius`. Computed from an integral image in f64.
fn box_mean(src: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let mut integral = vec![0.0f64; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0f64;
        for x in 0..w {
            row += src[y * w + x];
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0f64; h * w];
    let r = radius as isize;
    for y in 0..h {
        let y0 = (y as isize - r).max(0) as usize;
        let y1 = ((y as isize + r + 1) as usize).min(h);
        for x in 0..w {
            let x0 = (x as isize - r).max(0) as usize;
            let x1 = ((x as isize + r + 1) as usize).min(w);
            let sum = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
            out[y * w + x] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Edge-preserving guided filter applied per disparity slice, steered by the
/// raw grayscale image (0-255 units). Per window: `a = cov(I,p)/(var(I)+eta)`,
/// `b = mean(p) - a·mean(I)`, output `box(a)·I + box(b)`, clamped to [-1, 1].
pub fn guided_filter_volume(
    volume: &CostVolume,
    guide: &GrayImage,
    radius: usize,
    eta: f32,
) -> Result<CostVolume> {
    let (h, w) = (volume.height, volume.width);
    if guide.width() != w || guide.height() != h {
        return Err(Error::Shape(format!(
            "guide image {}×{} does not match volume {w}×{h}",
            guide.width(),
            guide.height()
        )));
    }
    if radius == 0 {
        return Err(Error::Config("guided filter radius must be positive".into()));
    }
    let guide_f64: Vec<f64> = guide.data().iter().map(|v| *v as f64).collect();
    let guide_sq: Vec<f64> = guide_f64.iter().map(|v| v * v).collect();
    let mean_i = box_mean(&guide_f64, h, w, radius);
    let mean_ii = box_mean(&guide_sq, h, w, radius);

    let mut out = volume.clone();
    let plane = h * w;
    let mut slice_f64 = vec![0.0f64; plane];
    let mut slice_ip = vec![0.0f64; plane];
    let mut a = vec![0.0f64; plane];
    let mut b = vec![0.0f64; plane];
    for d in 0..volume.max_disparity {
        let src = volume.slice(d);
        for p in 0..plane {
            slice_f64[p] = src[p] as f64;
            slice_ip[p] = src[p] as f64 * guide_f64[p];
        }
        let mean_p = box_mean(&slice_f64, h, w, radius);
        let mean_ip = box_mean(&slice_ip, h, w, radius);
        for p in 0..plane {
            let var = mean_ii[p] - mean_i[p] * mean_i[p];
            let cov = mean_ip[p] - mean_i[p] * mean_p[p];
            a[p] = cov / (var + eta as f64);
            b[p] = mean_p[p] - a[p] * mean_i[p];
        }
        let mean_a = box_mean(&a, h, w, radius);
        let mean_b = box_mean(&b, h, w, radius);
        let dst = out.slice_mut(d);
        for p in 0..plane {
            dst[p] = ((mean_a[p] * guide_f64[p] + mean_b[p]) as f32).clamp(-1.0, 1.0);
        }
    }
    Ok(out)
}

/// Picks the best-scoring disparity per pixel; ties go to the smallest `d`.
/// Every output pixel is valid.
pub fn winner_takes_all(volume: &CostVolume) -> DisparityMap {
    let (h, w) = (volume.height, volume.width);
    let mut map = DisparityMap::filled_invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut best_d = 0usize;
            let mut best = f32::NEG_INFINITY;
            for d in 0..volume.max_disparity {
                let v = volume.at(d, y, x);
                if v > best {
                    best = v;
                    best_d = d;
                }
            }
            map.set(x, y, best_d as f32);
        }
    }
    map
}

/// Matching knobs shared by the CLI and the pipeline.
#[derive(Debug, Clone, Copy)]
pub struct MatchConfig {
    /// Number of disparity hypotheses.
    pub max_disparity: usize,
    /// Apply the median + guided filters before disparity selection.
    pub filter: bool,
    /// Guided filter window radius.
    pub guided_radius: usize,
    /// Guided filter regularizer, in squared 0-255 intensity units.
    pub guided_eta: f32,
}

impl MatchConfig {
    pub fn new(max_disparity: usize) -> MatchConfig {
        MatchConfig {
            max_disparity,
            filter: true,
            guided_radius: 8,
            guided_eta: 10.0,
        }
    }
}

/// Everything one stereo pair produces before refinement.
pub struct MatchOutput {
    pub left_disparity: DisparityMap,
    pub right_disparity: DisparityMap,
    pub left_volume: CostVolume,
    pub right_volume: CostVolume,
}

/// Full matching stage: standardize both views, extract features once per
/// image, build and filter both cost volumes, then select disparities.
pub fn match_pair(
    left: &GrayImage,
    right: &GrayImage,
    weights: &NetworkWeights,
    config: &MatchConfig,
) -> Result<MatchOutput> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::Shape(format!(
            "stereo pair sizes differ: {}×{} vs {}×{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    let left_features = extract_features(&left.to_standardized_tensor(), weights)?;
    let right_features = extract_features(&right.to_standardized_tensor(), weights)?;

    let mut left_volume = build_cost_volume(
        &left_features,
        &right_features,
        config.max_disparity,
        VolumeDirection::LeftReference,
    )?;
    let mut right_volume = build_cost_volume(
        &left_features,
        &right_features,
        config.max_disparity,
        VolumeDirection::RightReference,
    )?;
    if config.filter {
        left_volume = median_filter_volume(&left_volume);
        right_volume = median_filter_volume(&right_volume);
        left_volume =
            guided_filter_volume(&left_volume, left, config.guided_radius, config.guided_eta)?;
        right_volume =
            guided_filter_volume(&right_volume, right, config.guided_radius, config.guided_eta)?;
    }
    let left_disparity = winner_takes_all(&left_volume);
    let right_disparity = winner_takes_all(&right_volume);
    Ok(MatchOutput {
        left_disparity,
        right_disparity,
        left_volume,
        right_volume,
    })
}

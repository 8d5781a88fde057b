//! Disparity refinement: consistency filtering, region masking, hole filling.
//!
//! Mismatches between the left and right disparity maps are invalidated
//! first. A marker-based watershed then splits the image into foreground
//! (near) and background (far) regions, the foreground mask is closed
//! morphologically, and the invalidated pixels are filled with rules chosen
//! by their region, so every pixel in the refined map ends up valid.

use crate::error::{Error, Result};
use crate::matcher::{DisparityMap, INVALID_DISPARITY};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

/// Largest left/right disagreement (in pixels) that still counts as
/// consistent.
pub const DEFAULT_LR_THRESHOLD: f32 = 1.1;

const NEIGHBORS4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Invalidates left-map pixels whose correspondence is missing or disagrees
/// with the right map by more than `threshold`. A pixel survives only when
/// `x - round(d)` lands inside the right map, is valid there, and the two
/// disparities differ by at most the threshold.
pub fn lr_consistency_check(
    left: &DisparityMap,
    right: &DisparityMap,
    threshold: f32,
) -> Result<DisparityMap> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::Shape(format!(
            "disparity map sizes differ: {}×{} vs {}×{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    let (w, h) = (left.width(), left.height());
    let mut out = left.clone();
    for y in 0..h {
        for x in 0..w {
            if !left.is_valid(x, y) {
                continue;
            }
            let d = left.get(x, y);
            let xr = x as i64 - d.round() as i64;
            let consistent = xr >= 0
                && (xr as usize) < w
                && right.is_valid(xr as usize, y)
                && (d - right.get(xr as usize, y)).abs() <= threshold;
            if !consistent {
                out.set(x, y, INVALID_DISPARITY);
            }
        }
    }
    Ok(out)
}

/// Watershed label: far scenery or near objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Region {
    Background,
    Foreground,
}

/// Per-pixel region labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    data: Vec<Region>,
}

impl RegionMask {
    pub fn filled(width: usize, height: usize, region: Region) -> RegionMask {
        RegionMask {
            width,
            height,
            data: vec![region; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Region {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, region: Region) {
        self.data[y * self.width + x] = region;
    }

    pub fn data(&self) -> &[Region] {
        &self.data
    }
}

/// The level quantiles that separate marker regions: the distinct sorted
/// disparity levels at index `floor(0.35·(k-1))` and `ceil(0.65·(k-1))`.
fn quantile_levels(levels: &[f32]) -> (f32, f32) {
    let m = (levels.len() - 1) as f64;
    let low = (0.35 * m).floor() as usize;
    let high = (0.65 * m).ceil() as usize;
    (levels[low], levels[high])
}

/// Extends valid disparities onto invalid pixels by multi-source breadth
/// first search, so the topography is defined everywhere.
fn extend_nearest_valid(map: &DisparityMap) -> Vec<f32> {
    let (w, h) = (map.width(), map.height());
    let mut out = map.data().to_vec();
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if map.is_valid(x, y) {
                seen[y * w + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for (dx, dy) in NEIGHBORS4 {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let n = ny as usize * w + nx as usize;
            if !seen[n] {
                seen[n] = true;
                out[n] = out[y * w + x];
                queue.push_back((nx as usize, ny as usize));
            }
        }
    }
    out
}

/// Central-difference gradient magnitude; indices clamp at the borders.
fn gradient_magnitude(values: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(h - 1);
            let gx = (values[y * w + xr] - values[y * w + xl]) / 2.0;
            let gy = (values[yd * w + x] - values[yu * w + x]) / 2.0;
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Heap key ordering the flood by ascending topography, with the pixel
/// coordinates breaking ties so the traversal is a total order.
#[derive(PartialEq)]
struct FloodEntry {
    topo: f32,
    y: usize,
    x: usize,
    region: Region,
}

impl Eq for FloodEntry {}

impl Ord for FloodEntry {
    fn cmp(&self, other: &FloodEntry) -> Ordering {
        // Reversed so the max-heap pops the lowest topography first.
        other
            .topo
            .total_cmp(&self.topo)
            .then_with(|| other.y.cmp(&self.y))
            .then_with(|| other.x.cmp(&self.x))
    }
}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &FloodEntry) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Splits the map into foreground and background by flooding a gradient
/// topography from disparity-level markers.
///
/// Markers: invalid pixels and valid pixels at or below the low quantile
/// level seed the background; valid pixels at or above the high quantile
/// level seed the foreground. When only one distinct level exists the whole
/// image is background. A map without any valid pixel cannot be segmented.
pub fn watershed_fg_bg(map: &DisparityMap) -> Result<RegionMask> {
    let (w, h) = (map.width(), map.height());
    let mut levels: Vec<f32> = map
        .data()
        .iter()
        .copied()
        .filter(|v| v.is_finite() && *v >= 0.0)
        .collect();
    if levels.is_empty() {
        return Err(Error::Degenerate(
            "no valid disparities to segment into regions".into(),
        ));
    }
    levels.sort_unstable_by(f32::total_cmp);
    levels.dedup();
    if levels.len() == 1 {
        return Ok(RegionMask::filled(w, h, Region::Background));
    }
    let (q_low, q_high) = quantile_levels(&levels);

    let mut label: Vec<Option<Region>> = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !map.is_valid(x, y) || map.get(x, y) <= q_low {
                label[i] = Some(Region::Background);
            } else if map.get(x, y) >= q_high {
                label[i] = Some(Region::Foreground);
            }
        }
    }

    let topo = gradient_magnitude(&extend_nearest_valid(map), w, h);
    let mut heap = BinaryHeap::new();
    for y in 0..h {
        for x in 0..w {
            if let Some(region) = label[y * w + x] {
                heap.push(FloodEntry {
                    topo: topo[y * w + x],
                    y,
                    x,
                    region,
                });
            }
        }
    }
    while let Some(entry) = heap.pop() {
        for (dx, dy) in NEIGHBORS4 {
            let (nx, ny) = (entry.x as i64 + dx, entry.y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let n = ny as usize * w + nx as usize;
            if label[n].is_none() {
                label[n] = Some(entry.region);
                heap.push(FloodEntry {
                    topo: topo[n],
                    y: ny as usize,
                    x: nx as usize,
                    region: entry.region,
                });
            }
        }
    }

    let data = label
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if !map.is_valid(i % w, i / w) {
                Region::Background
            } else {
                l.expect("flood reaches every pixel from nonempty markers")
            }
        })
        .collect();
    Ok(RegionMask {
        width: w,
        height: h,
        data,
    })
}

fn dilate5(fg: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            'window: for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0
                        && ny >= 0
                        && nx < w as i64
                        && ny < h as i64
                        && fg[ny as usize * w + nx as usize]
                    {
                        out[y * w + x] = true;
                        break 'window;
                    }
                }
            }
        }
    }
    out
}

fn erode5(fg: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![true; w * h];
    for y in 0..h {
        for x in 0..w {
            'window: for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    // Reads past the border see background.
                    let inside = nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64;
                    if !inside || !fg[ny as usize * w + nx as usize] {
                        out[y * w + x] = false;
                        break 'window;
                    }
                }
            }
        }
    }
    out
}

/// Morphological closing of the foreground: two 5×5 dilations followed by
/// two 5×5 erosions. Fills small holes and gaps inside foreground objects.
pub fn close_mask(mask: &RegionMask) -> RegionMask {
    let (w, h) = (mask.width, mask.height);
    let mut fg: Vec<bool> = mask.data.iter().map(|r| *r == Region::Foreground).collect();
    for _ in 0..2 {
        fg = dilate5(&fg, w, h);
    }
    for _ in 0..2 {
        fg = erode5(&fg, w, h);
    }
    RegionMask {
        width: w,
        height: h,
        data: fg
            .iter()
            .map(|f| if *f { Region::Foreground } else { Region::Background })
            .collect(),
    }
}

/// Lower median of all valid disparities on background pixels, if any.
fn global_background_median(map: &DisparityMap, mask: &RegionMask) -> Option<f32> {
    let (w, h) = (map.width(), map.height());
    let mut values: Vec<f32> = (0..w * h)
        .filter(|i| map.is_valid(i % w, i / w) && mask.data[*i] == Region::Background)
        .map(|i| map.data()[i])
        .collect();
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f32::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

/// Background fill rule for one pixel: nearest valid background disparity
/// scanning right first, then left, then the global background median.
fn background_fill_value(
    map: &DisparityMap,
    mask: &RegionMask,
    x: usize,
    y: usize,
    global: Option<f32>,
) -> Option<f32> {
    let w = map.width();
    let row_hit = |sx: usize| map.is_valid(sx, y) && mask.get(sx, y) == Region::Background;
    for sx in x + 1..w {
        if row_hit(sx) {
            return Some(map.get(sx, y));
        }
    }
    for sx in (0..x).rev() {
        if row_hit(sx) {
            return Some(map.get(sx, y));
        }
    }
    global
}

/// Fills invalid background pixels. Validity is read from the input map
/// only, so already-filled values never influence later pixels.
pub fn fill_background(map: &DisparityMap, mask: &RegionMask) -> Result<DisparityMap> {
    check_mask_size(map, mask)?;
    let (w, h) = (map.width(), map.height());
    let global = global_background_median(map, mask);
    let mut out = map.clone();
    let mut zero_filled = 0usize;
    for y in 0..h {
        for x in 0..w {
            if map.is_valid(x, y) || mask.get(x, y) != Region::Background {
                continue;
            }
            match background_fill_value(map, mask, x, y, global) {
                Some(v) => out.set(x, y, v),
                None => {
                    out.set(x, y, 0.0);
                    zero_filled += 1;
                }
            }
        }
    }
    if zero_filled > 0 {
        log::warn!(
            "no valid background disparities anywhere; {zero_filled} pixels filled with 0"
        );
    }
    Ok(out)
}

/// Fills invalid foreground pixels with the average of the first valid
/// foreground disparity found walking each of the eight directions; walks
/// that leave the image contribute nothing. Pixels with no hit at all fall
/// back to the background rule. Validity is read from the input map only.
pub fn fill_foreground(map: &DisparityMap, mask: &RegionMask) -> Result<DisparityMap> {
    check_mask_size(map, mask)?;
    let (w, h) = (map.width(), map.height());
    let global = global_background_median(map, mask);
    const DIRS: [(i64, i64); 8] = [
        (1, 0),
        (-1, 0),
        (0, 1),
        (0, -1),
        (1, 1),
        (1, -1),
        (-1, 1),
        (-1, -1),
    ];
    let mut out = map.clone();
    let mut zero_filled = 0usize;
    for y in 0..h {
        for x in 0..w {
            if map.is_valid(x, y) || mask.get(x, y) != Region::Foreground {
                continue;
            }
            let mut sum = 0.0f64;
            let mut hits = 0usize;
            for (dx, dy) in DIRS {
                let (mut cx, mut cy) = (x as i64, y as i64);
                loop {
                    cx += dx;
                    cy += dy;
                    if cx < 0 || cy < 0 || cx >= w as i64 || cy >= h as i64 {
                        break;
                    }
                    let (ux, uy) = (cx as usize, cy as usize);
                    if map.is_valid(ux, uy) && mask.get(ux, uy) == Region::Foreground {
                        sum += map.get(ux, uy) as f64;
                        hits += 1;
                        break;
                    }
                }
            }
            if hits > 0 {
                out.set(x, y, (sum / hits as f64) as f32);
            } else {
                match background_fill_value(map, mask, x, y, global) {
                    Some(v) => out.set(x, y, v),
                    None => {
                        out.set(x, y, 0.0);
                        zero_filled += 1;
                    }
                }
            }
        }
    }
    if zero_filled > 0 {
        log::warn!(
            "no valid disparities reachable; {zero_filled} foreground pixels filled with 0"
        );
    }
    Ok(out)
}

fn check_mask_size(map: &DisparityMap, mask: &RegionMask) -> Result<()> {
    if map.width() != mask.width || map.height() != mask.height {
        return Err(Error::Shape(format!(
            "mask {}×{} does not match disparity map {}×{}",
            mask.width,
            mask.height,
            map.width(),
            map.height()
        )));
    }
    Ok(())
}

/// Refined map plus the intermediates worth inspecting.
pub struct RefineOutput {
    pub refined: DisparityMap,
    pub consistency_checked: DisparityMap,
    pub mask: RegionMask,
}

/// Full refinement: consistency check, watershed regions, mask closing,
/// then region-specific hole filling. Both fills read the same
/// post-check snapshot, so their order cannot matter; the merged result
/// has no invalid pixels left.
pub fn refine_disparity(
    left: &DisparityMap,
    right: &DisparityMap,
    threshold: f32,
) -> Result<RefineOutput> {
    let checked = lr_consistency_check(left, right, threshold)?;
    let mask = close_mask(&watershed_fg_bg(&checked)?);
    let background_filled = fill_background(&checked, &mask)?;
    let foreground_filled = fill_foreground(&checked, &mask)?;
    let (w, h) = (checked.width(), checked.height());
    let mut refined = checked.clone();
    for y in 0..h {
        for x in 0..w {
            if checked.is_valid(x, y) {
                continue;
            }
            let filled = match mask.get(x, y) {
                Region::Background => background_filled.get(x, y),
                Region::Foreground => foreground_filled.get(x, y),
            };
            refined.set(x, y, filled);
        }
    }
    Ok(RefineOutput {
        refined,
        consistency_checked: checked,
        mask,
    })
}

//! File formats: PFM and 16-bit PNG disparity maps, PGM and PNG images,
//! raw cost-volume dumps, key=value config files, and dataset directories.
//!
//! Read errors carry the byte offset where parsing failed wherever the
//! format is parsed by hand.

use crate::error::{Error, Result};
use crate::gray::{GrayImage, LUMA_B, LUMA_G, LUMA_R};
use crate::matcher::{CostVolume, DisparityMap, INVALID_DISPARITY};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Magic bytes of a raw cost-volume dump.
pub const COST_VOLUME_MAGIC: [u8; 4] = *b"FCCV";

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteCursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> ByteCursor<'a> {
        ByteCursor { bytes, pos: 0, path }
    }

    fn err(&self, offset: usize, detail: impl Into<String>) -> Error {
        Error::format(self.path, offset as u64, detail)
    }

    fn skip_whitespace(&mut self, allow_comments: bool) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if allow_comments && b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    /// Next whitespace-delimited token and the offset it starts at.
    fn token(&mut self, what: &str, allow_comments: bool) -> Result<(&'a str, usize)> {
        self.skip_whitespace(allow_comments);
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(start, format!("unexpected end of header, expected {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| self.err(start, format!("{what} is not valid text")))?;
        Ok((text, start))
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str, allow_comments: bool) -> Result<T> {
        let (text, start) = self.token(what, allow_comments)?;
        text.parse()
            .map_err(|_| self.err(start, format!("cannot parse {what} from {text:?}")))
    }

    /// Consumes the single whitespace byte separating header from data.
    fn expect_one_whitespace(&mut self) -> Result<()> {
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(self.err(self.pos, "expected a whitespace byte before pixel data"));
        }
        self.pos += 1;
        Ok(())
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

fn checked_dims(cursor: &ByteCursor, w: usize, h: usize, offset: usize) -> Result<usize> {
    if w == 0 || h == 0 {
        return Err(cursor.err(offset, format!("dimensions must be positive, got {w}×{h}")));
    }
    w.checked_mul(h)
        .filter(|n| *n <= (1usize << 40))
        .ok_or_else(|| cursor.err(offset, format!("dimensions {w}×{h} overflow")))
}

/// Reads a grayscale PFM disparity map. The file stores rows bottom-up; the
/// returned map is top-down. Non-finite samples become invalid pixels. The
/// scale line's sign selects the byte order; its magnitude is ignored.
pub fn read_pfm(path: &Path) -> Result<DisparityMap> {
    let bytes = std::fs::read(path)?;
    let mut cursor = ByteCursor::new(&bytes, path);
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(cursor.err(0, "not a PFM file, expected magic Pf"));
    }
    match bytes[1] {
        b'f' => {}
        b'F' => {
            return Err(cursor.err(0, "color PFM (PF) is not supported, expected grayscale Pf"))
        }
        other => {
            return Err(cursor.err(
                0,
                format!("not a PFM file, magic is P{}", other as char),
            ))
        }
    }
    cursor.pos = 2;
    let (w_text, w_off) = cursor.token("width", false)?;
    let w: usize = w_text
        .parse()
        .map_err(|_| cursor.err(w_off, format!("cannot parse width from {w_text:?}")))?;
    let h: usize = cursor.parse("height", false)?;
    let pixel_count = checked_dims(&cursor, w, h, w_off)?;
    let scale: f32 = cursor.parse("scale", false)?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(cursor.err(cursor.pos, format!("scale must be finite and nonzero, got {scale}")));
    }
    cursor.expect_one_whitespace()?;

    let data_offset = cursor.pos;
    let data = cursor.rest();
    let expected = pixel_count * 4;
    if data.len() != expected {
        return Err(cursor.err(
            data_offset,
            format!(
                "expected {expected} bytes of pixel data for {w}×{h}, found {}",
                data.len()
            ),
        ));
    }
    let little_endian = scale < 0.0;
    let mut values = vec![0.0f32; pixel_count];
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // File rows run bottom to top.
        let (file_row, x) = (i / w, i % w);
        let y = h - 1 - file_row;
        values[y * w + x] = if v.is_finite() { v } else { INVALID_DISPARITY };
    }
    DisparityMap::new(w, h, values)
}

/// Writes a grayscale PFM with scale -1 (little-endian), rows bottom-up.
/// Invalid pixels are stored as +infinity.
pub fn write_pfm(path: &Path, map: &DisparityMap) -> Result<()> {
    let (w, h) = (map.width(), map.height());
    let mut out = Vec::with_capacity(32 + w * h * 4);
    write!(out, "Pf\n{w} {h}\n-1.0\n")?;
    for y in (0..h).rev() {
        for x in 0..w {
            let v = if map.is_valid(x, y) {
                map.get(x, y)
            } else {
                f32::INFINITY
            };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn image_open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::format(path, 0, format!("cannot decode image: {e}")))
}

/// Reads a disparity map stored as 16-bit grayscale PNG with quantization
/// step 1/256; a stored zero marks an invalid pixel.
pub fn read_disparity_png16(path: &Path) -> Result<DisparityMap> {
    let img = image_open(path)?;
    let buf = match img {
        image::DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::format(
                path,
                0,
                format!(
                    "expected 16-bit grayscale PNG, got {:?}",
                    other.color()
                ),
            ))
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let values = buf
        .as_raw()
        .iter()
        .map(|raw| {
            if *raw == 0 {
                INVALID_DISPARITY
            } else {
                *raw as f32 / 256.0
            }
        })
        .collect();
    DisparityMap::new(w, h, values)
}

/// Writes a disparity map as 16-bit grayscale PNG: stored value is
/// `round(d·256)` clamped to the u16 range, with 0 reserved for invalid.
pub fn write_disparity_png16(path: &Path, map: &DisparityMap) -> Result<()> {
    let (w, h) = (map.width(), map.height());
    let raw: Vec<u16> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if map.is_valid(x, y) {
                (map.get(x, y) as f64 * 256.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, raw)
        .expect("buffer sized to dimensions");
    buf.save(path)
        .map_err(|e| Error::format(path, 0, format!("cannot encode PNG: {e}")))
}

/// Reads a binary PGM (P5) image, 8-bit or 16-bit big-endian, rescaled to
/// 0-255 when the max value differs from 255. Header comments are allowed.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path)?;
    let mut cursor = ByteCursor::new(&bytes, path);
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(cursor.err(0, "not a binary PGM file, expected magic P5"));
    }
    cursor.pos = 2;
    let (w_text, w_off) = cursor.token("width", true)?;
    let w: usize = w_text
        .parse()
        .map_err(|_| cursor.err(w_off, format!("cannot parse width from {w_text:?}")))?;
    let h: usize = cursor.parse("height", true)?;
    let pixel_count = checked_dims(&cursor, w, h, w_off)?;
    let maxval: u32 = cursor.parse("max value", true)?;
    if maxval == 0 || maxval > 65535 {
        return Err(cursor.err(cursor.pos, format!("max value {maxval} out of range 1..=65535")));
    }
    cursor.expect_one_whitespace()?;

    let data_offset = cursor.pos;
    let data = cursor.rest();
    let wide = maxval > 255;
    let expected = pixel_count * if wide { 2 } else { 1 };
    if data.len() != expected {
        return Err(cursor.err(
            data_offset,
            format!("expected {expected} bytes of pixel data, found {}", data.len()),
        ));
    }
    let scale = 255.0 / maxval as f32;
    let values: Vec<f32> = if wide {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * scale)
            .collect()
    } else {
        data.iter().map(|b| *b as f32 * scale).collect()
    };
    GrayImage::new(w, h, values)
}

/// Writes an 8-bit binary PGM, rounding and clamping samples to 0..=255.
pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let (w, h) = (image.width(), image.height());
    let mut out = Vec::with_capacity(32 + w * h);
    write!(out, "P5\n{w} {h}\n255\n")?;
    out.extend(image.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    std::fs::write(path, out)?;
    Ok(())
}

fn luminance(r: f32, g: f32, b: f32) -> f32 {
    LUMA_R * r + LUMA_G * g + LUMA_B * b
}

/// Loads an image as grayscale in 0-255 units. PGM is parsed directly; PNG
/// goes through the decoder, with color images reduced by the fixed
/// luminance weights and 16-bit samples rescaled to the 8-bit range.
pub fn load_gray_image(path: &Path) -> Result<GrayImage> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
    {
        return read_pgm(path);
    }
    let img = image_open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f32> = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.as_raw().iter().map(|v| *v as f32).collect()
        }
        image::DynamicImage::ImageLumaA8(buf) => {
            buf.as_raw().chunks_exact(2).map(|px| px[0] as f32).collect()
        }
        image::DynamicImage::ImageLuma16(buf) => {
            let scale = 255.0 / 65535.0;
            buf.as_raw().iter().map(|v| *v as f32 * scale).collect()
        }
        image::DynamicImage::ImageRgb8(buf) => buf
            .as_raw()
            .chunks_exact(3)
            .map(|px| luminance(px[0] as f32, px[1] as f32, px[2] as f32))
            .collect(),
        image::DynamicImage::ImageRgba8(buf) => buf
            .as_raw()
            .chunks_exact(4)
            .map(|px| luminance(px[0] as f32, px[1] as f32, px[2] as f32))
            .collect(),
        image::DynamicImage::ImageRgb16(buf) => {
            let scale = 255.0 / 65535.0;
            buf.as_raw()
                .chunks_exact(3)
                .map(|px| {
                    luminance(
                        px[0] as f32 * scale,
                        px[1] as f32 * scale,
                        px[2] as f32 * scale,
                    )
                })
                .collect()
        }
        other => {
            return Err(Error::format(
                path,
                0,
                format!("unsupported pixel layout {:?}", other.color()),
            ))
        }
    };
    GrayImage::new(w, h, values)
}

/// Loads a disparity map, choosing the format by file extension
/// (`.pfm` or 16-bit `.png`).
pub fn load_disparity(path: &Path) -> Result<DisparityMap> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pfm") => read_pfm(path),
        Some(e) if e.eq_ignore_ascii_case("png") => read_disparity_png16(path),
        _ => Err(Error::format(
            path,
            0,
            "unsupported disparity format, expected .pfm or .png",
        )),
    }
}

/// Saves a disparity map, choosing the format by file extension.
pub fn save_disparity(path: &Path, map: &DisparityMap) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pfm") => write_pfm(path, map),
        Some(e) if e.eq_ignore_ascii_case("png") => write_disparity_png16(path, map),
        _ => Err(Error::format(
            path,
            0,
            "unsupported disparity format, expected .pfm or .png",
        )),
    }
}

/// Dumps a cost volume as magic, u32 dimensions `d h w`, then the f32
/// scores in `[d][y][x]` order, all little-endian.
pub fn write_cost_volume(path: &Path, volume: &CostVolume) -> Result<()> {
    let mut out =
        Vec::with_capacity(16 + volume.values().len() * 4);
    out.extend_from_slice(&COST_VOLUME_MAGIC);
    out.extend_from_slice(&(volume.max_disparity() as u32).to_le_bytes());
    out.extend_from_slice(&(volume.height() as u32).to_le_bytes());
    out.extend_from_slice(&(volume.width() as u32).to_le_bytes());
    for v in volume.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a cost-volume dump back as `(d, h, w, values)`.
pub fn read_cost_volume(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bytes = std::fs::read(path)?;
    let err = |offset: usize, detail: String| Error::format(path, offset as u64, detail);
    if bytes.len() < 16 {
        return Err(err(0, format!("file is {} bytes, header needs 16", bytes.len())));
    }
    if bytes[..4] != COST_VOLUME_MAGIC {
        return Err(err(0, "bad magic, expected FCCV".into()));
    }
    let dim = |i: usize| {
        u32::from_le_bytes([bytes[4 + 4 * i], bytes[5 + 4 * i], bytes[6 + 4 * i], bytes[7 + 4 * i]])
            as usize
    };
    let (d, h, w) = (dim(0), dim(1), dim(2));
    let expected = 16 + d * h * w * 4;
    if bytes.len() != expected {
        return Err(err(
            16,
            format!("expected {expected} bytes for {d}×{h}×{w}, found {}", bytes.len()),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((d, h, w, values))
}

/// Parses key=value text: one pair per line, `#` starts a comment, blank
/// lines are skipped, surrounding whitespace is trimmed, later duplicates
/// win. Lines without `=` are rejected with their line number.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (number, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", number + 1))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", number + 1)));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Reads and parses a key=value config file.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_key_values(&text).map_err(|e| match e {
        Error::Config(detail) => Error::Config(format!("{}: {detail}", path.display())),
        other => other,
    })
}

/// One stereo pair in a dataset directory, matched by file stem.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub stem: String,
    pub left: PathBuf,
    pub right: PathBuf,
    pub ground_truth: Option<PathBuf>,
}

/// A dataset directory: `left/` and `right/` image subdirectories, an
/// optional `gt/` subdirectory, and an optional `dataset.cfg` key=value
/// file.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub name: String,
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
    pub config: BTreeMap<String, String>,
}

/// Maps file stem to path for every file in `dir` whose extension matches
/// one of `extensions` (case-insensitive), sorted by stem.
pub fn files_by_stem(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let matched = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| extensions.iter().any(|x| e.eq_ignore_ascii_case(x)));
        if !matched {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            map.insert(stem.to_string(), path);
        }
    }
    Ok(map)
}

/// Scans a dataset directory. Left and right images are paired by stem and
/// stems are returned sorted; a left image without a right counterpart is
/// an error, while missing ground truth just leaves the entry without one.
pub fn scan_dataset(root: &Path) -> Result<DatasetLayout> {
    let left_dir = root.join("left");
    let right_dir = root.join("right");
    for dir in [&left_dir, &right_dir] {
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "dataset {} is missing the {}/ subdirectory",
                root.display(),
                dir.file_name().unwrap().to_string_lossy()
            )));
        }
    }
    let lefts = files_by_stem(&left_dir, &["png", "pgm"])?;
    let rights = files_by_stem(&right_dir, &["png", "pgm"])?;
    let gt_dir = root.join("gt");
    let gts = if gt_dir.is_dir() {
        files_by_stem(&gt_dir, &["pfm", "png"])?
    } else {
        BTreeMap::new()
    };
    if lefts.is_empty() {
        return Err(Error::Config(format!(
            "dataset {} has no images under left/",
            root.display()
        )));
    }
    let mut entries = Vec::with_capacity(lefts.len());
    for (stem, left) in lefts {
        let right = rights.get(&stem).cloned().ok_or_else(|| {
            Error::Config(format!(
                "dataset {}: no right image for stem {stem:?}",
                root.display()
            ))
        })?;
        entries.push(DatasetEntry {
            ground_truth: gts.get(&stem).cloned(),
            stem,
            left,
            right,
        });
    }
    let config_path = root.join("dataset.cfg");
    let config = if config_path.is_file() {
        read_config_file(&config_path)?
    } else {
        BTreeMap::new()
    };
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| root.display().to_string());
    Ok(DatasetLayout {
        name,
        root: root.to_path_buf(),
        entries,
        config,
    })
}

//! Densely connected siamese feature extractor.
//!
//! The network is a stack of 3×3 convolutions with TanH after every layer
//! and no downsampling: layer 0 reads the single-channel image, and every
//! later layer reads the channel concatenation of *all* previous layer
//! outputs. With `F` feature maps per layer, layer `i > 0` therefore has
//! `F·i` input channels, and the parameter count is
//! `Σ_i (9·c_i·F + F)` with `c_0 = 1`, `c_i = F·i`.
//!
//! Both stereo views run through the same weights; matching happens later on
//! the cosine similarity of the per-pixel 64-vectors this module produces.

use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    concat_channels, conv2d, crop_center, tanh_activation, ConvLayerParams, PadMode, Tensor,
};

/// First bytes of the binary weights format.
pub const WEIGHTS_MAGIC: [u8; 4] = *b"FCDC";
/// Current weights format version.
pub const WEIGHTS_VERSION: u32 = 1;

/// Architecture of the feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Number of convolution layers, 2..=8.
    pub num_layers: usize,
    /// Output channels of every layer.
    pub feature_maps: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_layers: 5,
            feature_maps: 64,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.num_layers) {
            return Err(Error::Config(format!(
                "num_layers must be within 2..=8, got {}",
                self.num_layers
            )));
        }
        if self.feature_maps == 0 {
            return Err(Error::Config("feature_maps must be positive".into()));
        }
        Ok(())
    }

    /// Input channels of layer `i` (0-based): the image for layer 0, the
    /// concatenation of all previous outputs afterwards.
    pub fn in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.feature_maps * layer
        }
    }

    /// Total weights plus biases across all layers.
    pub fn parameter_count(&self) -> usize {
        (0..self.num_layers)
            .map(|i| 9 * self.in_channels(i) * self.feature_maps + self.feature_maps)
            .sum()
    }

    /// Side length of one output pixel's receptive field: `2·num_layers + 1`.
    pub fn receptive_field(&self) -> usize {
        2 * self.num_layers + 1
    }
}

/// All convolution layers of a feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    config: NetworkConfig,
    layers: Vec<ConvLayerParams>,
}

impl NetworkWeights {
    /// Seeded initialization: kernels uniform in ±sqrt(1/(in_channels·9)),
    /// biases zero. The same seed always produces the same weights.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<NetworkWeights> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let in_c = config.in_channels(i);
            let out_c = config.feature_maps;
            let bound = (1.0 / (in_c as f32 * 9.0)).sqrt();
            let kernel_data: Vec<f32> = (0..out_c * in_c * 9)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(ConvLayerParams::new(
                Tensor::new(&[out_c, in_c, 3, 3], kernel_data)?,
                Tensor::zeros(&[out_c]),
            )?);
        }
        Ok(NetworkWeights { config, layers })
    }

    pub(crate) fn from_layers(
        config: NetworkConfig,
        layers: Vec<ConvLayerParams>,
    ) -> Result<NetworkWeights> {
        config.validate()?;
        if layers.len() != config.num_layers {
            return Err(Error::Config(format!(
                "expected {} layers, got {}",
                config.num_layers,
                layers.len()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_channels() != config.in_channels(i)
                || layer.out_channels() != config.feature_maps
            {
                return Err(Error::Config(format!(
                    "layer {i} has {}→{} channels, expected {}→{}",
                    layer.in_channels(),
                    layer.out_channels(),
                    config.in_channels(i),
                    config.feature_maps
                )));
            }
        }
        Ok(NetworkWeights { config, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayerParams] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.parameter_count()).sum()
    }

    /// Serializes to the `FCDC` binary format: magic, version, layer count,
    /// then per layer the channel sizes, kernel size, kernel values (row
    /// major `[out, in, ky, kx]`) and biases, all little-endian f32/u32, with
    /// a trailing CRC32 over everything after the 8-byte header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        payload.extend_from_slice(&(self.config.num_layers as u32).to_le_bytes());
        for layer in &self.layers {
            payload.extend_from_slice(&(layer.in_channels() as u32).to_le_bytes());
            payload.extend_from_slice(&(layer.out_channels() as u32).to_le_bytes());
            payload.extend_from_slice(&3u32.to_le_bytes());
            for v in layer.kernel().data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            for v in layer.bias().data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&payload);
        let mut bytes = Vec::with_capacity(payload.len() + 12);
        bytes.extend_from_slice(&WEIGHTS_MAGIC);
        bytes.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        bytes.extend_from_slice(&payload);
        bytes.extend_from_slice(&crc.to_le_bytes());
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NetworkWeights> {
        let bytes = fs::read(path)?;
        let mut cursor = Cursor {
            bytes: &bytes,
            pos: 0,
            path,
        };
        let magic = cursor.take(4, "magic")?;
        if magic != WEIGHTS_MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected \"FCDC\""));
        }
        let version = cursor.u32("version")?;
        if version != WEIGHTS_VERSION {
            return Err(Error::format(
                path,
                4,
                format!("unsupported version {version}, expected {WEIGHTS_VERSION}"),
            ));
        }
        if bytes.len() < 16 {
            return Err(Error::format(path, cursor.pos as u64, "truncated payload"));
        }
        let payload = &bytes[8..bytes.len() - 4];
        let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let actual_crc = crc32fast::hash(payload);
        if stored_crc != actual_crc {
            return Err(Error::format(
                path,
                (bytes.len() - 4) as u64,
                format!("checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"),
            ));
        }
        cursor.bytes = &bytes[..bytes.len() - 4];

        let num_layers = cursor.u32("layer count")? as usize;
        let mut layers = Vec::new();
        let mut feature_maps = 0usize;
        for i in 0..num_layers {
            let context = format!("layer {i}");
            let in_c = cursor.u32(&context)? as usize;
            let out_c = cursor.u32(&context)? as usize;
            let k = cursor.u32(&context)?;
            if k != 3 {
                return Err(Error::format(
                    path,
                    (cursor.pos - 4) as u64,
                    format!("layer {i}: kernel size {k}, only 3 is supported"),
                ));
            }
            if i == 0 {
                feature_maps = out_c;
            }
            let kernel = cursor.f32s(out_c * in_c * 9, &context)?;
            let bias = cursor.f32s(out_c, &context)?;
            layers.push(ConvLayerParams::new(
                Tensor::new(&[out_c, in_c, 3, 3], kernel)?,
                Tensor::new(&[out_c], bias)?,
            )?);
        }
        if cursor.pos != cursor.bytes.len() {
            return Err(Error::format(
                path,
                cursor.pos as u64,
                format!("{} trailing bytes after last layer", cursor.bytes.len() - cursor.pos),
            ));
        }
        let config = NetworkConfig {
            num_layers,
            feature_maps,
        };
        NetworkWeights::from_layers(config, layers).map_err(|e| match e {
            Error::Config(detail) => Error::format(path, 12, detail),
            other => other,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!("file truncated while reading {what}"),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(count * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Runs the dense extractor on a `[B, 1, H, W]` standardized image and
/// returns `[B, F, H, W]` features (the last layer's TanH output). Spatial
/// size is preserved by one-pixel reflect padding at every layer.
pub fn extract_features(image: &Tensor, weights: &NetworkWeights) -> Result<Tensor> {
    let (_, c, _, _) = image.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!(
            "extractor input must have 1 channel, got {c}"
        )));
    }
    let mut outputs: Vec<Tensor> = Vec::with_capacity(weights.layers.len());
    for (i, layer) in weights.layers.iter().enumerate() {
        let conv = if i == 0 {
            conv2d(image, layer, PadMode::Reflect1)?
        } else {
            let refs: Vec<&Tensor> = outputs.iter().collect();
            let stacked = concat_channels(&refs)?;
            conv2d(&stacked, layer, PadMode::Reflect1)?
        };
        outputs.push(tanh_activation(&conv));
    }
    Ok(outputs.pop().expect("validated layer count"))
}

/// Feature vectors at the spatial center of a batch of patches, as `[B, F]`.
///
/// When the patch is at least as large as the receptive field, the
/// convolutions run unpadded and shrink toward the center; padding can never
/// reach the center pixel in that case, so this matches running
/// [`extract_features`] on the full patch and reading the center column,
/// at roughly a ninth of the arithmetic. Smaller patches fall back to the
/// padded path.
pub fn extract_center_features(patches: &Tensor, weights: &NetworkWeights) -> Result<Tensor> {
    let (b, c, h, w) = patches.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!(
            "extractor input must have 1 channel, got {c}"
        )));
    }
    let f = weights.config.feature_maps;
    let rf = weights.config.receptive_field();
    let center = if h >= rf && w >= rf {
        let n_layers = weights.layers.len();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(n_layers);
        for (i, layer) in weights.layers.iter().enumerate() {
            let conv = if i == 0 {
                conv2d(patches, layer, PadMode::Valid)?
            } else {
                let (th, tw) = (h - 2 * i, w - 2 * i);
                let cropped: Vec<Tensor> = outputs
                    .iter()
                    .map(|t| crop_center(t, th, tw))
                    .collect::<Result<_>>()?;
                let refs: Vec<&Tensor> = cropped.iter().collect();
                let stacked = concat_channels(&refs)?;
                conv2d(&stacked, layer, PadMode::Valid)?
            };
            outputs.push(tanh_activation(&conv));
        }
        crop_center(&outputs.pop().expect("validated layer count"), 1, 1)?
    } else {
        let full = extract_features(patches, weights)?;
        crop_center(&full, 1, 1)?
    };
    Tensor::new(&[b, f], center.into_data())
}

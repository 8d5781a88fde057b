//! Stereo disparity estimation with a densely connected convolutional
//! feature extractor.
//!
//! The crate is organised as a pipeline:
//!
//! * [`tensor`] - minimal f32 tensor type plus the handful of differentiable
//!   operations the feature network needs (conv2d, tanh, channel concat,
//!   cosine similarity, hinge loss) and a tape-based reverse-mode graph.
//! * [`network`] - the siamese feature extractor: stacked 3×3 convolutions
//!   where every layer consumes the concatenation of all previous layer
//!   outputs, TanH after each layer, no downsampling.
//! * [`trainer`] - patch sampling from ground-truth disparities, the hinge
//!   objective over similarity pairs, Adam, and the training loop.
//! * [`matcher`] - cosine-similarity cost volumes, median + guided filtering,
//!   and winner-takes-all disparity selection.
//! * [`refine`] - left-right consistency check, foreground/background
//!   segmentation, morphological closing, and hole filling.
//! * [`io`] / [`eval`] / [`pipeline`] - image and disparity file formats,
//!   n-point error metrics, and the end-to-end pipeline used by the CLI.

pub mod error;
pub mod eval;
pub mod gray;
pub mod io;
pub mod matcher;
pub mod network;
pub mod pipeline;
pub mod refine;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Crate-wide error enum. Variants map onto the CLI exit codes documented in
/// the README: format errors exit 2, configuration errors exit 3, degenerate
/// inputs exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or image dimensions do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A parameter value is outside its documented domain.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file on disk does not follow its declared format.
    #[error("{}: format error at byte {offset}: {detail}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    /// An operation was called before its prerequisite ran (e.g. reading
    /// gradients before backward).
    #[error("invalid state: {0}")]
    State(String),

    /// Input data is structurally valid but carries no usable signal
    /// (no valid ground-truth pixels, empty dataset, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The patch sampler could not place a sample within its retry budget.
    #[error("sampling exhausted after {attempts} attempts: {detail}")]
    SamplingExhausted { attempts: u32, detail: String },

    /// Training hit a non-finite loss and stopped.
    #[error("training aborted at iteration {iteration}: {detail}")]
    TrainingAborted { iteration: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for format errors.
    pub fn format(path: impl Into<PathBuf>, offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            detail: detail.into(),
        }
    }
}

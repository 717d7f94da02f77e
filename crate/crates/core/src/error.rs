use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("triplet generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("timestep {t} out of range for schedule of length {len}")]
    TimestepOutOfRange { t: usize, len: usize },
    #[error("invalid step count {steps} for schedule of length {len}")]
    StepCountInvalid { steps: usize, len: usize },
    #[error("forward cache does not match: {0}")]
    CacheMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("image too small for SSIM: {width}x{height} (need at least 11x11)")]
    TooSmall { width: usize, height: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Whether the failure came from the filesystem rather than from the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

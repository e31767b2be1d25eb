use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensor was not recorded on this tape")]
    DetachedTensor,
    #[error("value out of domain: {0}")]
    DomainError(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("window of size {window} does not fit a {height}x{width} frame")]
    WindowTooLarge {
        window: usize,
        height: usize,
        width: usize,
    },
    #[error("{from_h}x{from_w} is not an integer multiple of {to_h}x{to_w}")]
    NonIntegerFactor {
        from_h: usize,
        from_w: usize,
        to_h: usize,
        to_w: usize,
    },
    #[error("video has no frames")]
    EmptyVideo,
    #[error("non-finite loss at inner step {step}: {value}")]
    NonFiniteLoss { step: usize, value: f64 },
    #[error("pruning ratio {0} outside [0, 1)")]
    InvalidRatio(f64),
    #[error("quantization bit width {0} outside [2, 16]")]
    InvalidBits(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported version {0}")]
    VersionUnsupported(u16),
    #[error("truncated or malformed container: {0}")]
    Malformed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("bad header in {}: {reason}", .path.display())]
    BadHeader { path: PathBuf, reason: String },
    #[error("frames of differing resolution in {}", .0.display())]
    MixedResolutions(PathBuf),
    #[error("image error in {}: {source}", .path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("io error at {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite Gaussian parameter at index {index}")]
    NonFiniteGaussian { index: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGradient { group: String },

    #[error("training diverged at epoch {epoch}, frame {frame}: {source}")]
    Training {
        epoch: usize,
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad magic: expected GSVC")]
    BadMagic,

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("truncated payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("corrupt bitstream: {0}")]
    Corrupt(String),

    #[error("image too small for MS-SSIM: {width}x{height} (minimum side 11)")]
    ImageTooSmall { width: usize, height: usize },

    #[error("empty frame directory: {0}")]
    EmptyDirectory(PathBuf),

    #[error("frame {path} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    MixedDimensions {
        path: PathBuf,
        found_w: usize,
        found_h: usize,
        expected_w: usize,
        expected_h: usize,
    },

    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },

    #[error("raw file {path} has {found} bytes, sidecar implies {expected}")]
    SizeMismatch {
        path: PathBuf,
        found: u64,
        expected: u64,
    },

    #[error("cannot write {path}: {reason}")]
    Unwritable { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {}: {reason}", path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("cannot encode image {}: {reason}", path.display())]
    Encode { path: PathBuf, reason: String },

    #[error("{}: expected {expected} channel(s), found {found}", path.display())]
    ChannelMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("length mismatch in {context}: expected {expected}, found {found}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid texture: {0}")]
    InvalidTexture(String),

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("structuring element size must be odd, got {0}")]
    EvenKernel(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("corrupt model manifest: {0}")]
    CorruptManifest(String),

    #[error("model payload size mismatch: {0}")]
    SizeMismatch(String),

    #[error("model payload checksum mismatch: manifest {expected}, payload {actual}")]
    ChecksumMismatch { expected: String, actual: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "missing_file",
            Error::Io { .. } => "io",
            Error::Decode { .. } => "decode",
            Error::Encode { .. } => "encode",
            Error::ChannelMismatch { .. } => "channel_mismatch",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::InvalidTexture(_) => "invalid_texture",
            Error::EmptyMask => "empty_mask",
            Error::EmptyCorpus => "empty_corpus",
            Error::ImageTooSmall { .. } => "image_too_small",
            Error::EvenKernel(_) => "even_kernel",
            Error::InvalidConfig(_) => "invalid_config",
            Error::CorruptManifest(_) => "corrupt_manifest",
            Error::SizeMismatch(_) => "size_mismatch",
            Error::ChecksumMismatch { .. } => "checksum_mismatch",
        }
    }
}

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/image dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Invalid configuration or operation specification.
    #[error("invalid config: {0}")]
    Config(String),
    /// An index is outside its valid range.
    #[error("index out of range: {0}")]
    Index(String),
    /// Input data violates an invariant (value range, mask values, ...).
    #[error("invalid data: {0}")]
    Data(String),
    /// A file or byte stream does not parse (bad magic, truncation, checksum).
    #[error("format error: {0}")]
    Format(String),
    /// Non-finite values, divergence, or other numeric failure.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Bitstream was produced by a different model than the one loaded.
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

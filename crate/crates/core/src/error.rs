use std::path::PathBuf;

/// Crate-wide error type. Each failure mode named by the module contracts
/// maps to its own variant so callers can match on them.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt image header: {0}")]
    CorruptHeader(String),

    #[error("corrupt image payload: {0}")]
    CorruptPayload(String),

    #[error("path not writable: {path}: {source}")]
    UnwritablePath {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("expected {expected} channels, got {got}")]
    BadChannelCount { expected: String, got: usize },

    #[error("dimensions {height}x{width} not divisible by {factor}")]
    NonDivisibleDimensions {
        height: usize,
        width: usize,
        factor: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("patch size must be odd and >= 1, got {0}")]
    EvenPatchSize(usize),

    #[error("Haar transform requires even dimensions, got {height}x{width}")]
    OddDimensions { height: usize, width: usize },

    #[error("vector length mismatch: {0}")]
    LengthMismatch(String),

    #[error("k = {k} out of range [0, {max}]")]
    KOutOfRange { k: usize, max: usize },

    #[error("timestep {t} out of range [1, {t_count}]")]
    TimestepOutOfRange { t: usize, t_count: usize },

    #[error("invalid parameter range: {0}")]
    InvalidRange(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("data length {got} does not match {height}x{width}x{channels}")]
    BadDataLength {
        height: usize,
        width: usize,
        channels: usize,
        got: usize,
    },

    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),

    #[error("bad checkpoint file: {0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag, used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::FileNotFound(_) => "file_not_found",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::CorruptHeader(_) => "corrupt_header",
            Error::CorruptPayload(_) => "corrupt_payload",
            Error::UnwritablePath { .. } => "unwritable_path",
            Error::BadChannelCount { .. } => "bad_channel_count",
            Error::NonDivisibleDimensions { .. } => "non_divisible_dimensions",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::EvenPatchSize(_) => "even_patch_size",
            Error::OddDimensions { .. } => "odd_dimensions",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::KOutOfRange { .. } => "k_out_of_range",
            Error::TimestepOutOfRange { .. } => "timestep_out_of_range",
            Error::InvalidRange(_) => "invalid_range",
            Error::EmptyDataset => "empty_dataset",
            Error::MissingCheckpoint(_) => "missing_checkpoint",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::BadDataLength { .. } => "bad_data_length",
            Error::NonFiniteValue(_) => "non_finite_value",
            Error::BadCheckpoint(_) => "bad_checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

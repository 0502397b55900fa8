//! One error type for the whole crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{path}: unsupported raster format ({message})")]
    UnsupportedFormat { path: PathBuf, message: String },

    #[error("image dimensions {width}x{height} are degenerate (need at least 2x2)")]
    BadDimensions { width: usize, height: usize },

    #[error("expected {expected} values for {width}x{height}, got {got}")]
    LengthMismatch {
        width: usize,
        height: usize,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch: {left_width}x{left_height} vs {right_width}x{right_height}")]
    ShapeMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },

    #[error("scale must be positive and finite, got {0}")]
    BadScale(f64),

    #[error("bin width must be positive and finite, got {0}")]
    BadBinWidth(f64),

    #[error("plane fit needs at least 3 valid pixels, found {0}")]
    TooFewPixels(usize),

    #[error("all valid pixels lie in image row {0}; the plane fit is under-determined")]
    SingleRow(usize),

    #[error("rank-deficient fit: the rotated coordinate is constant across the input")]
    RankDeficient,

    #[error("closed-form pitch solver: discriminant {0} < 0, no real root")]
    NoRealRoot(f64),

    #[error("closed-form pitch solver: stationarity coefficients all vanish")]
    DegenerateStationarity,

    #[error("fitted scale {0} is not positive; the geometry is degenerate")]
    NonPositiveScale(f64),

    #[error("threshold undefined: input values are all equal")]
    ConstantInput,

    #[error("{0}")]
    BadParameter(String),

    #[error("tensor dimension mismatch: {0}")]
    TensorShape(String),

    #[error("self-attention is only allowed at the highest pyramid level (found at level {0} of {1})")]
    SchemePlacement(usize, usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss term: {0}")]
    NonFiniteTerm(f64),

    #[error("scene spec: {0}")]
    BadScene(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn decode(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Decode {
            path: path.into(),
            message: message.into(),
        }
    }
}

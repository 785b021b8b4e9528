use std::path::PathBuf;

use ctma_autograd::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value out of range: {0}")]
    ValueRange(String),
    #[error("pseudo-video needs at least 2 frames, got {0}")]
    BadFrameCount(usize),
    #[error("bad input shape: {0}")]
    BadShape(String),
    #[error("threshold must lie strictly inside (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("map is not binary: {0}")]
    NonBinary(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("cannot decode image {}: {reason}", path.display())]
    CorruptImage { path: PathBuf, reason: String },
    #[error("dataset layout: {0}")]
    Layout(String),
    #[error("raster {height}x{width} is smaller than the {tile}px tile")]
    TooSmall { height: usize, width: usize, tile: usize },
    #[error("pixel ({row}, {col}) is not covered by any tile")]
    CoverageGap { row: usize, col: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("loss became {value} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, value: f64 },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("run history has no validation records")]
    EmptyHistory,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for Error {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Shape(s) => Error::ShapeMismatch(s),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

/// Coarse failure class, used to pick process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Other,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::BadThreshold(_) | Error::BadFrameCount(_) => ErrorClass::Config,
            Error::MissingFile(_)
            | Error::CorruptImage { .. }
            | Error::Layout(_)
            | Error::Data(_)
            | Error::ValueRange(_)
            | Error::NonBinary(_)
            | Error::TooSmall { .. }
            | Error::BadShape(_)
            | Error::ShapeMismatch(_)
            | Error::CoverageGap { .. }
            | Error::CheckpointVersion { .. }
            | Error::Checkpoint(_) => ErrorClass::Data,
            Error::NonFiniteLoss { .. } => ErrorClass::Numeric,
            Error::EmptyHistory | Error::Io(_) => ErrorClass::Other,
        }
    }
}

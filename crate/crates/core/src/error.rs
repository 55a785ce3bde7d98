use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("spatial index is empty")]
    EmptyIndex,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("frame id {got} does not follow {last}")]
    Order { last: u64, got: u64 },

    #[error("descriptor norm {0} is not 1")]
    Norm(f64),

    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),

    #[error("invalid cluster count K={k} for {n} descriptors")]
    InvalidK { k: usize, n: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("no cluster with id {0}")]
    InvalidCluster(usize),

    #[error("no super keyframes")]
    EmptySuperKeyframes,

    #[error("trajectory leaves the difference matrix")]
    OutOfBounds,

    #[error("window {window} exceeds {rows} query rows")]
    WindowTooLarge { window: usize, rows: usize },

    #[error("no in-bounds trajectory")]
    NoValidTrajectory,

    #[error("no candidate run long enough for a window of {0}")]
    InsufficientHistory(usize),

    #[error("run {index} has {len} frames, expected 5")]
    RunLength { index: usize, len: usize },

    #[error("database is empty")]
    EmptyDatabase,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short name used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::Format(_) => "FormatError",
            Error::LengthMismatch(_) => "LengthMismatch",
            Error::EmptyInput(_) => "EmptyInput",
            Error::EmptyIndex => "EmptyIndex",
            Error::Shape(_) => "ShapeError",
            Error::Order { .. } => "OrderError",
            Error::Norm(_) => "NormError",
            Error::Dimension(..) => "DimensionError",
            Error::InvalidK { .. } => "InvalidK",
            Error::InvalidParams(_) => "InvalidParams",
            Error::InvalidCluster(_) => "InvalidCluster",
            Error::EmptySuperKeyframes => "EmptySuperKeyframes",
            Error::OutOfBounds => "OutOfBounds",
            Error::WindowTooLarge { .. } => "WindowTooLarge",
            Error::NoValidTrajectory => "NoValidTrajectory",
            Error::InsufficientHistory(_) => "InsufficientHistory",
            Error::RunLength { .. } => "RunLengthError",
            Error::EmptyDatabase => "EmptyDatabase",
        }
    }
}

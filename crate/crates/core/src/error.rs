use thiserror::Error;

/// Errors raised by the simulator and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate probe pair: squared distance {0:e} below threshold")]
    DegeneratePair(f64),

    #[error("probe {index} failed: {source}")]
    ProbeFailure {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error on line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

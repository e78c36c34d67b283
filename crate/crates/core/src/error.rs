use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("only {achievable} of {requested} beams map to real angles")]
    InsufficientAngles { requested: usize, achievable: usize },

    #[error("{requested} beams exceed the orthogonal capacity of {limit}")]
    CapacityExceeded { requested: usize, limit: usize },

    #[error("beam pattern is identically zero")]
    UndefinedPattern,

    #[error("preamble has zero variance; power ratio is undefined")]
    UndefinedRatio,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by a bad experiment description rather than I/O.
    pub fn is_config(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Csv(_))
    }
}

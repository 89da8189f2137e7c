use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite observation {0}")]
    NonFiniteObservation(f64),
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("invalid weight {value} at stream {index}: weights must be positive and finite")]
    InvalidWeight { index: usize, value: f64 },
    #[error("empty stream set")]
    EmptyStreams,
    #[error("{name} = {value} out of range [{lo}, {hi}]")]
    CountOutOfRange {
        name: &'static str,
        value: usize,
        lo: usize,
        hi: usize,
    },
    #[error("invalid probability {name} = {value}: must lie strictly between 0 and 1")]
    InvalidLevel { name: &'static str, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected} streams, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("J = {0} is too large for subset enumeration (limit {1}); use the closed form")]
    EnumerationTooLarge(usize, usize),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("duplicate scenario name {0:?}")]
    DuplicateScenario(String),
    #[error("scenario {name:?}: {source}")]
    Scenario {
        name: String,
        #[source]
        source: Box<Error>,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_level(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel { name, value })
    }
}

use thiserror::Error;

/// Errors surfaced by the library. Numerical non-convergence is reported in
/// result structs, not here; this type covers invalid input and failed
/// preconditions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

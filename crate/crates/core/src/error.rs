use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coloring: {0}")]
    InvalidColoring(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("state space has more than {cap} states")]
    BudgetExceeded { cap: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("chain is not ergodic: {0}")]
    NotErgodic(String),
    #[error("numeric overflow in {0}")]
    Overflow(&'static str),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("witness construction failed: {0}")]
    Witness(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}

use thiserror::Error;

/// Errors raised anywhere in the gradient engine, the accountant or the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{what} {value} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("incomplete tape: expected {expected} parameterized layers, found {found}")]
    IncompleteTape { expected: usize, found: usize },

    #[error("no root in bracket [{lo}, {hi}]: {reason}")]
    Range { lo: f64, hi: f64, reason: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

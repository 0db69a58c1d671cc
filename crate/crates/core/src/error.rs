use std::path::PathBuf;

use thiserror::Error;

use crate::tape::OpKind;

/// Errors raised across the simulation, training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("week {week} is outside the horizon of {horizon} weeks")]
    Horizon { week: usize, horizon: usize },

    #[error("horizon mismatch: expected {expected} weeks, found {found}")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric fault at node {node} ({op:?})")]
    TapeFault { node: usize, op: OpKind },

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::TapeFault { .. })
    }
}

/// Fails with a numeric fault when `value` is NaN or infinite.
pub(crate) fn ensure_finite(value: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric(format!("{} is {}", what(), value)))
    }
}

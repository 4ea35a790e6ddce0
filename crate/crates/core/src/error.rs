use thiserror::Error;

/// Errors raised by the engine.
///
/// `Validation` covers malformed inputs (bad mesh, out-of-range index,
/// inconsistent option data). `Numerical` covers runs that went
/// non-finite or unstable mid-computation.
#[derive(Debug, Error)]
pub enum VmcError {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{what} requires n <= {limit} (got n = {n})")]
    TooLarge {
        what: &'static str,
        n: usize,
        limit: usize,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl VmcError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self::Numerical(msg.into())
    }

    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, VmcError>;

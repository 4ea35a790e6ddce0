use meshvmc::VmcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, bad arguments, mismatched runs or a failed gate.
    #[error("{0}")]
    Validation(String),

    /// A run stopped on non-finite or unstable numerics.
    #[error("{stage}: {msg}")]
    Numerical { stage: String, msg: String },

    #[error("{stage}: {source}")]
    Core {
        stage: String,
        #[source]
        source: VmcError,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn numerical(stage: &str, msg: impl Into<String>) -> Self {
        Self::Numerical {
            stage: stage.to_string(),
            msg: msg.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for validation problems, 3 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Numerical { .. } => 3,
            Self::Core { source, .. } if source.is_numerical() => 3,
            Self::Core { source, .. } => match source {
                VmcError::Validation(_) | VmcError::TooLarge { .. } | VmcError::Serde(_) => 2,
                _ => 1,
            },
            Self::Json(_) => 2,
            Self::Io { .. } | Self::Csv(_) => 1,
        }
    }
}

/// Attaches a stage label to core errors.
pub trait Stage<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> Stage<T> for std::result::Result<T, VmcError> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|source| CliError::Core {
            stage: stage.to_string(),
            source,
        })
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

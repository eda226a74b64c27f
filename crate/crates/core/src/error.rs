use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
///
/// Each variant maps to a process exit code through [`PmlError::exit_code`].
#[derive(Debug, Error)]
pub enum PmlError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("backward pass requested without a recorded forward pass")]
    BackwardWithoutForward,

    #[error("tape was recorded against parameter version {tape}, store is at {store}")]
    StaleTape { tape: u64, store: u64 },

    #[error("non-finite value encountered in {0}; step aborted and parameters restored")]
    NumericAbort(String),

    #[error("{0}")]
    Metric(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<PmlError>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PmlError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        PmlError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn in_fold(self, fold: usize) -> Self {
        PmlError::Fold {
            fold,
            source: Box::new(self),
        }
    }

    /// 2 config, 3 data, 4 verification, 5 numeric abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            PmlError::Config(_) | PmlError::Json(_) => 2,
            PmlError::Parse { .. }
            | PmlError::InvalidData(_)
            | PmlError::Dimension { .. }
            | PmlError::Metric(_)
            | PmlError::Io { .. } => 3,
            PmlError::Verification(_) => 4,
            PmlError::NumericAbort(_)
            | PmlError::BackwardWithoutForward
            | PmlError::StaleTape { .. } => 5,
            PmlError::Fold { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PmlError>;

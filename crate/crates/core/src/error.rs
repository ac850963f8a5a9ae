use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TsqError>;

#[derive(Debug, Error)]
pub enum TsqError {
    #[error("video has no frames")]
    EmptyVideo,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("format error in record {record}: {message}")]
    Format { record: String, message: String },

    #[error("non-finite value produced by {layer}")]
    Numeric { layer: String },

    #[error("training diverged at epoch {epoch}: batch loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TsqError {
    pub(crate) fn format(record: impl Into<String>, message: impl Into<String>) -> Self {
        TsqError::Format {
            record: record.into(),
            message: message.into(),
        }
    }

    pub(crate) fn mismatch(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        TsqError::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TsqError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, TsqError::Numeric { .. } | TsqError::Diverged { .. })
    }
}

use std::io;
use std::path::Path;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    /// Bad configuration or arguments; `path` names the offending key.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },
    #[error(transparent)]
    Core(#[from] dpfl_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn config(path: impl Into<String>, message: impl ToString) -> Self {
        LabError::Config { path: path.into(), message: message.to_string() }
    }

    pub fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        LabError::Format { what: what.into(), reason: reason.into() }
    }

    /// 1 for configuration errors, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config { .. } => 1,
            _ => 2,
        }
    }
}

/// Wraps an IO error with the path it happened on.
pub fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LabError + '_ {
    move |source| LabError::Io { context: path.display().to_string(), source }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] pcode_core::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("incompatible: {0}")]
    Mismatch(String),

    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl BenchError {
    /// Short stable label used in diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::Core(pcode_core::Error::Diverged { .. }) => "diverged",
            BenchError::Core(pcode_core::Error::Corrupt(_)) => "corrupt",
            BenchError::Core(_) => "core",
            BenchError::Config(_) => "config",
            BenchError::Corrupt(_) => "corrupt",
            BenchError::Mismatch(_) => "mismatch",
            BenchError::Json(_) => "manifest",
            BenchError::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

use std::path::PathBuf;

/// Errors produced by the workbench library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A data file could not be read or decoded.
    #[error("ingestion error for {path}: {msg}")]
    Ingestion { path: PathBuf, msg: String },

    /// Annotation values outside their declared range, or similar data problems.
    #[error("validation error: {0}")]
    Validation(String),

    /// A persisted artifact (checkpoint, cache entry) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// Non-finite values or other numerical breakdown.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// API misuse, e.g. backward() on a consumed graph.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn ingestion(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Ingestion { path: path.into(), msg: msg.into() }
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code class for the CLI: config 2, data 3, numerical 4, other 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Ingestion { .. } | Error::Validation(_) | Error::Format(_) | Error::Io(_) => 3,
            Error::Numerical(_) | Error::Dimension(_) => 4,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric or structural parameter is outside its allowed range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("joint sensitive domain of size {size} exceeds the cap of {cap}")]
    DomainTooLarge { size: usize, cap: usize },

    #[error("degenerate threshold: {0}")]
    DegenerateThreshold(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name, used by the CLI to pick an exit code.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parameter(_) | Error::DomainTooLarge { .. } => "parameter",
            Error::Schema(_) => "schema",
            Error::Data(_) | Error::DegenerateThreshold(_) => "data",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Csv(_) | Error::Json(_) => "format",
        }
    }
}

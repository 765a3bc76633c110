use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed net or reference to an undeclared place/transition.
    #[error("structural error: {0}")]
    Structure(String),
    /// A firing was requested for a transition that is not enabled.
    #[error("transition `{0}` is not enabled in the current marking")]
    NotEnabled(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    /// A hazard, activation or loss became negative, NaN or infinite.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("{failed} of {total} samples failed, above the 1% budget")]
    GenerationFailures { failed: usize, total: usize },
    #[error("load error ({}): {reason}", path.display())]
    Load { path: PathBuf, reason: String },
    #[error("i/o error ({}): {source}", path.display())]
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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

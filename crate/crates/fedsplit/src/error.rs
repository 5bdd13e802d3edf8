use thiserror::Error;

/// Errors shared across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("empty vector is not allowed here")]
    EmptyVector,

    #[error("non-finite value produced in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("csv parse error in {path} at row {row}, column `{column}`: {reason}")]
    CsvParse {
        path: String,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("search failed: {0}")]
    SearchFailed(String),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

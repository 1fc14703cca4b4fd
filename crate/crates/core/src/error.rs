use thiserror::Error;

/// Errors raised anywhere in the flow toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    Numeric { op: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    #[error("invalid transform parameters: {0}")]
    Parameterization(String),

    #[error("matrix is (near) singular: |det| = {0:e}")]
    Singular(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("phoneme id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}

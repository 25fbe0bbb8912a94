use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operator is not declared normal: {0}")]
    NotNormal(String),
    #[error("cannot certify: {0}")]
    Uncertifiable(String),
    #[error("patch catalog unusable: {0}")]
    Catalog(String),
    #[error("unsupported model: {0}")]
    Unsupported(String),
    #[error("iteration cap {cap} reached without certification: {detail}")]
    IterationCap { cap: usize, detail: String },
    #[error("serialization: {0}")]
    Serialization(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for aborts of a certification loop, as opposed to bad input.
    pub fn is_certification_abort(&self) -> bool {
        matches!(self, Error::IterationCap { .. } | Error::Uncertifiable(_))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

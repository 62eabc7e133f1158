use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Buffer dimensions or channel counts do not match the operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter value is out of its accepted range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A numeric computation degenerated (singular system, non-finite values).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dataset, manifest, or file-format inconsistency.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 3 for data problems, 4 for numeric ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Parameter(_) | Error::Data(_) | Error::Io(_) | Error::Json(_) => 3,
            Error::Domain(_) | Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

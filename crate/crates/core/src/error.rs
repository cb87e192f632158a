//! Error taxonomy shared by the library and the CLI.
//!
//! Every fallible public operation returns [`Result`]. The CLI maps error
//! categories to process exit codes: validation/usage errors exit 2, size-cap
//! violations exit 3, numerical failures exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, malformed configuration, or misuse of an API.
    #[error("validation error: {0}")]
    Validation(String),

    /// A requested computation would exceed a configured size cap.
    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    /// An iterative or numerical procedure failed to meet its contract.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn size_cap(msg: impl Into<String>) -> Self {
        Error::SizeCap(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Io(_) | Error::ConfigParse(_) => 2,
            Error::SizeCap(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}

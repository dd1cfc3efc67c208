use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("non-finite value detected at iteration {t}")]
    NumericalFailure { t: usize },

    #[error("ratio undefined for the zero vector")]
    ZeroVector,

    #[error("client index {index} out of range for {n} clients")]
    ClientOutOfRange { index: usize, n: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("replay stream mismatch: {0}")]
    Replay(String),

    #[error("malformed message: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

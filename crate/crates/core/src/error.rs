use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape or rank mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Numerical failure: non-finite values, near-zero divisors in checked
    /// mode, diverged training, failed convergence.
    #[error("numerical error: {0}")]
    Numeric(String),

    /// Malformed or inconsistent input data: bad container bytes, manifest
    /// fields, missing dataset entries.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration; the message names the violated constraint.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

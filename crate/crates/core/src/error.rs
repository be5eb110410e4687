use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Caller supplied an out-of-range or inconsistent argument.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// A generated signal failed its own invariant check. This points at a
    /// bad design constant rather than a bad input.
    #[error("generation failed: {0}")]
    Generation(String),
    /// Input audio is unusable for analysis (silent, mostly invalid, ...).
    #[error("data quality: {0}")]
    DataQuality(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

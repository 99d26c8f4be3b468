use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DoaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),
    #[error("found {found} spectral peaks, expected {expected}")]
    PeakShortfall { found: usize, expected: usize },
}

pub type Result<T> = std::result::Result<T, DoaError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(DoaError::InvalidArgument(msg.into()))
}

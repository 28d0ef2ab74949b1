use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("size limit exceeded: {what} is {got}, limit {limit}")]
    SizeLimit {
        what: &'static str,
        got: usize,
        limit: usize,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("matrix has an all-zero row or column")]
    Support,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}

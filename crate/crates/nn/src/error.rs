use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("batch too small: {op} needs at least {min} samples, got {got}")]
    BatchTooSmall { op: &'static str, min: usize, got: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NnError::Dimension(msg.into()))
}

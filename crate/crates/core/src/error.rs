use thiserror::Error;

#[derive(Debug, Error)]
pub enum FragkinError {
    #[error("config error: {0}")]
    Config(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("kernel error: {0}")]
    Kernel(String),
    #[error("certificate failure: {0}")]
    Certificate(String),
    #[error("numerical fault: {0}")]
    Numerical(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FragkinError>;

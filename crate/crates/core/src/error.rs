use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("queue is empty; statistics are undefined")]
    EmptyQueue,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("closed form does not apply: {0}")]
    Regime(String),

    #[error("negative discriminant {0}: no real boost magnitude exists")]
    NegativeDiscriminant(f64),

    #[error("invalid cluster count k={k} for {samples} samples")]
    InvalidClusterCount { k: usize, samples: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("image {height}x{width} is smaller than the 3x3 kernel")]
    UndersizedImage { height: usize, width: usize },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

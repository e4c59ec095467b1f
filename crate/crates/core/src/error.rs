use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid kernel matrix: {0}")]
    KernelValidity(String),

    #[error("invalid probability vector: {0}")]
    Probability(String),

    #[error("output {output} has zero marginal probability")]
    DegenerateOutput { output: usize },

    #[error("observation has zero likelihood under every particle")]
    DegenerateEvidence,

    #[error("metric not supported: {0}")]
    UnsupportedMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised across the library. Each variant names the failing quantity.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("definiteness error: {0}")]
    Definiteness(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("inner solver did not converge: {0}")]
    Convergence(String),
    #[error("point outside the domain: {0}")]
    Domain(String),
    #[error("unknown scheme: {0}")]
    UnknownScheme(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("reference oracle failed: {0}")]
    Oracle(String),
    #[error("consistency check failed: {0}")]
    Consistency(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

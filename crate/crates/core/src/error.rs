//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the training laboratory.
#[derive(Debug, Error)]
pub enum CcrlError {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value failed validation or a config file was malformed.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A trajectory lacks data (typically a distribution) required for scoring.
    #[error("incomplete trajectory: {0}")]
    IncompleteTrajectory(String),

    /// Problem generation could not produce an admissible instance.
    #[error("generation error: {0}")]
    Generation(String),

    /// Checkpoint serialization, versioning, or vocabulary-hash failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// The divergence guard tripped during training.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// HTTP transport failure after exhausting retries.
    #[error("transport error: {0}")]
    Transport(String),

    /// The remote endpoint answered with a body we cannot interpret.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CcrlError>;

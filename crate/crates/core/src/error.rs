use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate element {index}: {reason}")]
    DegenerateElement { index: usize, reason: String },

    #[error("degenerate hinge: {0}")]
    DegenerateHinge(String),

    #[error("non-physical material: {0}")]
    NonPhysicalMaterial(String),

    #[error("simulation diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solve did not converge: {0}")]
    NotConverged(String),

    #[error("all {starts} starts failed: {diagnostics}")]
    AllStartsFailed { starts: usize, diagnostics: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

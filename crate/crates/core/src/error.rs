use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("model has {nodes} nodes; exact enumeration is capped at {max}")]
    TooManyNodes { nodes: usize, max: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("active edge ({0}, {1}) is not column-local or between adjacent columns")]
    NonLocalEdge(usize, usize),

    #[error("group of {size} nodes exceeds the cap of {max}")]
    GroupTooLarge { size: usize, max: usize },

    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("chain bank needs at least 2 chains, got {0}")]
    TooFewChains(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("preconditioner frozen before any curvature was accumulated")]
    EmptyPreconditioner,

    #[error("edge {edge}: {reason}")]
    EdgeState { edge: usize, reason: &'static str },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

//! Crate-wide error type.

use crate::recovery::RecoveryResult;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("graph contains a directed cycle")]
    Cycle,
    #[error("node index {index} out of range for a graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("invalid structure: {0}")]
    Structure(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("no free direction: {constraints} orthogonality constraints in dimension {dim}")]
    NoFreeDirection { constraints: usize, dim: usize },
    #[error("mixing matrix not full rank after {0} attempts")]
    RankDeficient(usize),
    #[error("recovery stalled in round {round}: no zero-variance coordinate found")]
    Stalled {
        round: usize,
        partial: Box<RecoveryResult>,
    },
    #[error("ground truth unavailable: {0}")]
    MissingGroundTruth(String),
    #[error("unknown mechanism `{0}`")]
    UnknownMechanism(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

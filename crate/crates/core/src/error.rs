use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("insufficient nodes: {nodes} nodes for {types} network types")]
    InsufficientNodes { nodes: usize, types: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: no edges")]
    NoEdges { path: PathBuf },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("ill-conditioned neighborhood at agent {agent} (condition estimate {condition:.3e})")]
    IllConditioned { agent: usize, condition: f64 },

    #[error("divergence: non-finite covariance after {iterations} iterations")]
    Divergence { iterations: usize },

    #[error("non-contractive weights: {0}")]
    NonContractive(String),

    #[error("naive defined for m=1 only (got m={0})")]
    NaiveMemory(usize),

    #[error("insufficient periods: {available} usable periods, need {required}")]
    InsufficientPeriods { available: usize, required: usize },

    #[error("rank-deficient regressors for agent {agent}")]
    RankDeficient { agent: usize },

    #[error("signal weight degenerate for agent {agent}")]
    DegenerateSignalWeight { agent: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

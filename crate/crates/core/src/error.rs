use thiserror::Error;

use crate::oracle::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state space: {0}")]
    InvalidSpace(String),

    #[error("invalid perturbation radii: {0}")]
    InvalidRadii(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no feasible point found after {attempts} uniform proposals")]
    NoFeasiblePoint { attempts: usize },

    #[error("separation constraints still violated after {retries} perturbation retries")]
    RetryCapExceeded { retries: usize },

    #[error("density returned {value} (must be finite and non-negative)")]
    InvalidDensity { value: f64 },

    #[error("level {level} unreachable at this budget: no seeds found in {draws} draws")]
    LevelUnreachable { level: usize, draws: u64 },

    #[error("at least {needed} batches are required, got {got}")]
    TooFewBatches { needed: usize, got: usize },

    #[error("at least {needed} honest samples are required, got {got}")]
    TooFewHonestSamples { needed: usize, got: usize },

    #[error("missing estimate for level {0}")]
    MissingLevel(usize),

    #[error("empty sample")]
    EmptySample,

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("composite controller: all {threads} instances crashed")]
    AllInstancesCrashed { threads: usize },

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },

    #[error("cost row must have at least one nonzero entry")]
    ZeroRow,

    #[error("{0} must not be empty")]
    Empty(&'static str),

    /// The stacked design matrix of a subset is not full column rank, so the
    /// aggregate cost has no unique minimizer.
    #[error("non-unique minimizer: design matrix of {subset} is rank deficient")]
    RankDeficient { subset: String },

    /// No deterministic resilient algorithm exists once f >= n/2.
    #[error("fault bound violated: need n > 2f, got n = {n}, f = {f}")]
    FaultBound { n: usize, f: usize },

    #[error("filter precondition violated: {0}")]
    FilterPrecondition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("{n} agents exceed the enumeration limit of {limit} (use --force to override)")]
    TooManyAgents { n: usize, limit: usize },

    #[error("unknown agent {0}")]
    UnknownAgent(usize),

    #[error("iterate became non-finite at round {round}")]
    NonFiniteIterate { round: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures (rank, preconditions of the math) as opposed to
    /// malformed input or usage errors.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::FaultBound { .. }
                | Error::FilterPrecondition(_)
                | Error::InvalidCoefficients(_)
                | Error::NonFiniteIterate { .. }
                | Error::TooManyAgents { .. }
        )
    }
}

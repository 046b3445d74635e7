use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains NaN or infinite entries")]
    NonFiniteInput,

    #[error("matrix is not positive definite (eigenvalue {eigenvalue:e} at or below tolerance {tolerance:e})")]
    NotPositiveDefinite { eigenvalue: f64, tolerance: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix has numerical rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("class means are equal; direction is undefined")]
    EqualMeans,

    #[error("class means differ; an equal-mean pair is required")]
    UnequalMeans,

    #[error("distributions are identical; no discriminative direction exists")]
    IdenticalDistributions,

    #[error("class means span only {rank} dimensions")]
    RankDeficientMeans { rank: usize },

    #[error("class {class} has {found} samples, need at least {needed}")]
    InsufficientSamples {
        class: usize,
        found: usize,
        needed: usize,
    },

    #[error("expected a strictly positive input, got {0}")]
    NonPositiveInput(f64),

    #[error("could not draw a full column rank channel after {0} attempts")]
    ChannelRankFailure(usize),

    #[error("KL divergence evaluated to {0:e}, which is negative beyond round-off")]
    NegativeDivergence(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code used in structured CLI error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonFiniteInput => "NonFiniteInput",
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::EqualMeans => "EqualMeans",
            Error::UnequalMeans => "UnequalMeans",
            Error::IdenticalDistributions => "IdenticalDistributions",
            Error::RankDeficientMeans { .. } => "RankDeficientMeans",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::NonPositiveInput(_) => "NonPositiveInput",
            Error::ChannelRankFailure(_) => "ChannelRankFailure",
            Error::NegativeDivergence(_) => "NegativeDivergence",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
        }
    }

    /// Process exit code: 2 validation, 3 numerical failure, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch(_)
            | Error::InvalidArgument(_)
            | Error::Parse(_)
            | Error::InsufficientSamples { .. }
            | Error::UnequalMeans
            | Error::NonFiniteInput
            | Error::NonPositiveInput(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}

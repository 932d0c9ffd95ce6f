use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric: |m[{i}][{j}] - m[{j}][{i}]| = {gap}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("principal submatrix needs dimension >= 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("sample covariance is singular")]
    SingularCovariance,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("optimizer failed: {0}")]
    OptimizerFailed(String),

    #[error("objective is NaN at the starting point")]
    NonFiniteStart,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("fitting {node} failed on fold {fold}: {reason}")]
    FitFailed {
        node: String,
        fold: usize,
        reason: String,
    },

    #[error("node sets differ")]
    NodeSetMismatch,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("too many groups for exhaustive Bergmann-Hommel: {0} > 6")]
    TooManyGroups(usize),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("json: {0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

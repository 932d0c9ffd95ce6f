use thiserror::Error;

/// Exit status 2 covers usage and data problems, 3 numeric failures.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<spbn::Error> for CliError {
    fn from(e: spbn::Error) -> Self {
        use spbn::Error::*;
        match e {
            NotPositiveDefinite { .. }
            | NotSymmetric { .. }
            | NonFinite(_)
            | SingularCovariance
            | RankDeficient
            | OptimizerFailed(_)
            | NonFiniteStart
            | FitFailed { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

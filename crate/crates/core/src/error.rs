use thiserror::Error;

use crate::optim::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An object could not be built from its parts (e.g. a covariance that
    /// is not positive definite).
    #[error("construction error: {0}")]
    Construction(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("solver did not converge ({context}): {report:?}")]
    NonConvergence { context: String, report: SolveReport },

    /// A decorrelation column stayed infeasible after all escalation rounds.
    #[error("column {column} infeasible after {escalations} escalations")]
    Infeasible { column: usize, escalations: usize },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("split {split} failed: {source}")]
    Split {
        split: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Process exit status for the command-line tool: 2 for bad input or
    /// configuration, 3 for solver failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } | Error::Infeasible { .. } | Error::LinearAlgebra(_) => 3,
            Error::Split { source, .. } => source.exit_code(),
            Error::Io(_) | Error::Csv(_) => 4,
            _ => 2,
        }
    }
}

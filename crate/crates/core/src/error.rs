use thiserror::Error;

/// Errors raised by model construction, reformulation and solving.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("covariance matrix is not positive definite")]
    CholeskyFailure,

    #[error("risk transform f = {0} is not below 1; no finite quantile exists")]
    InfeasibleTransform(f64),

    #[error("model is infeasible: {0}")]
    Infeasible(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("weight vector rho is zero")]
    ZeroVector,

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("malformed conic program: {0}")]
    MalformedProgram(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Errors caused by the caller's data rather than by the numerics.
    pub fn is_bad_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::Domain(_)
                | Error::Dimension { .. }
                | Error::CholeskyFailure
                | Error::ZeroVector
                | Error::Unsupported(_)
                | Error::MalformedProgram(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_) | Error::InfeasibleTransform(_))
    }

    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            got,
        }
    }
}

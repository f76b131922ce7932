use thiserror::Error;

/// Errors raised by the optimization toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A value lies outside the domain of the named parameter or function.
    #[error("parameter `{name}`: value {value} outside [{lower}, {upper}]")]
    Domain {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Least-squares design matrix does not have full column rank.
    #[error("singular design: columns {columns:?} are linearly dependent on earlier columns")]
    SingularDesign { columns: Vec<String> },

    #[error("response has zero variance")]
    ZeroVariance,

    #[error("evaluation {eval_id} failed: {message}")]
    Evaluation { eval_id: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

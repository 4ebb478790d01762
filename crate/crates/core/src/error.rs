use thiserror::Error;

pub type Result<T> = std::result::Result<T, MsraError>;

/// Errors produced by the library.
///
/// The CLI maps these onto exit codes through [`MsraError::exit_code`].
#[derive(Debug, Error)]
pub enum MsraError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance is not positive semi-definite: eigenvalue {eigenvalue:.3e} (index {index}) is below -1e-10")]
    NotPositiveSemidefinite { eigenvalue: f64, index: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("column {ticker} sums to {sum}")]
    ColumnSum { ticker: String, sum: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e}, last iterate {last_iterate:?})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("constraint stays positive along the allocation direction up to {bound:.3e}: {message}")]
    Unbounded { bound: f64, message: String },

    #[error("risk allocation is not unique ({0}); pass accept_nonunique to use the minimum-norm selection")]
    NonUnique(String),

    #[error("saddle system is singular (condition estimate {condition:.3e}); use the finite-difference method")]
    SingularSystem { condition: f64 },

    #[error("point {point:?} lies outside the surrogate domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl MsraError {
    /// Process exit code: 1 for configuration/validation problems, 2 for
    /// numerical failures, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            MsraError::Io(_) => 3,
            MsraError::NonConvergence { .. }
            | MsraError::Unbounded { .. }
            | MsraError::SingularSystem { .. }
            | MsraError::DegenerateDenominator(_)
            | MsraError::OutsideDomain { .. }
            | MsraError::NonUnique(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MsraError::InvalidInput(msg.into())
    }
}

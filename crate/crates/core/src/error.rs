use thiserror::Error;

/// Errors produced by the geometry, subproblem, and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point is not on the manifold (feasibility residual {residual:e})")]
    Infeasible { residual: f64 },

    #[error("vector is not in the normal space (tangent component {residual:e})")]
    NotNormal { residual: f64 },

    #[error("semismooth Newton did not converge in {iters} iterations (residual {residual:e})")]
    MaxInnerIterations { iters: usize, residual: f64 },

    #[error("B^T M B is not positive definite at the current mask (min eigenvalue {min_eig:e})")]
    AssumptionViolation { min_eig: f64 },

    #[error("Krylov breakdown after {iters} iterations")]
    KrylovBreakdown { iters: usize },

    #[error("linear solve did not reach tolerance in {iters} iterations (relative residual {residual:e})")]
    MaxLinIterations { iters: usize, residual: f64 },

    #[error("line search failed after {backtracks} backtracks")]
    LineSearchFailure { backtracks: usize },

    #[error("naive subproblem is not convex (min tangent Hessian eigenvalue {min_eig:e})")]
    NonconvexSubproblem { min_eig: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors produced by the planning and simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "solver did not converge after {iterations} iterations (gap {gap:.3e}, dual residual {dual_residual:.3e})"
    )]
    NotConverged {
        iterations: usize,
        gap: f64,
        dual_residual: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

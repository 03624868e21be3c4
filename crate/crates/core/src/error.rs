use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("point {index} at ({x}, {y}) lies outside the physical domain")]
    Domain { index: usize, x: f64, y: f64 },

    #[error("degenerate rescale map: {0}")]
    DegenerateMap(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("correlation parameter out of range: tau[{index}] = {value}")]
    Parameter { index: usize, value: f64 },

    #[error("eigensolver did not converge after {restarts} restarts (residuals {residuals:?})")]
    NoConvergence { restarts: usize, residuals: Vec<f64> },

    #[error("correlation matrix is numerically singular; nearest design points are {first} and {second}")]
    Conditioning { first: usize, second: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("undefined relative error: zero reference field at time step {0}")]
    UndefinedMre(usize),

    #[error("quadrature did not converge (error bound {bound:e})")]
    Quadrature { bound: f64 },

    #[error("requested {requested} edges but only {allowed} are allowed by the mask")]
    TooManyEdges { requested: usize, allowed: usize },

    #[error("model has no fitted precision matrix")]
    Unfitted,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

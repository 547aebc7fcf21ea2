use thiserror::Error;

/// Errors raised by the simulation, estimation and variational routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("quadrature did not reach tolerance for covariance entry ({row}, {col}): error estimate {estimate:e}")]
    Quadrature { row: usize, col: usize, estimate: f64 },

    #[error("quadrature did not reach tolerance: error estimate {0:e}")]
    QuadratureFailure(f64),

    #[error("matrix is not positive definite after jitter: pivot {pivot:e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("price {price} outside the no-arbitrage band ({lower}, {upper}) at k = {k}")]
    PriceOutOfBand { price: f64, k: f64, lower: f64, upper: f64 },

    #[error("implied volatility search did not converge after {0} iterations")]
    ImpliedVolNoConvergence(usize),

    #[error("vega below floor at k = {0}: skew undefined")]
    VegaFloor(f64),

    #[error("degenerate kernel support at k = {0}: all weights vanish")]
    DegenerateSupport(f64),

    #[error("unstable estimate at k = {k}: {reason}")]
    UnstableEstimate { k: f64, reason: String },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    OptimizerNoConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("y = {y} outside the computed grid [{lower}, {upper}]")]
    OutOfRange { y: f64, lower: f64, upper: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("malformed batch file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

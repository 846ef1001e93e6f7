use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coordinate {value} outside domain [{min}, {max}]")]
    OutsideDomain { value: f64, min: f64, max: f64 },

    #[error("index {index} out of bounds in dimension {dim} of extent {extent}")]
    IndexOutOfBounds {
        index: usize,
        dim: usize,
        extent: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular geometry Jacobian at parametric point {point:?} (det = {det:e})")]
    SingularJacobian { point: Vec<f64>, det: f64 },

    #[error("non-finite forcing value at x = {point:?}, t = {time}")]
    NonFiniteForcing { point: Vec<f64>, time: f64 },

    #[error("upwind parameter system for row {row} is numerically singular (cond ~ {cond:e})")]
    SingularStabilization { row: usize, cond: f64 },

    #[error("time factor is not lower triangular (max strict-upper entry {0:e})")]
    NotLowerTriangular(f64),

    #[error("singular spatial block at time index {0}")]
    SingularSpatialBlock(usize),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LsvError>;

#[derive(Debug, Error)]
pub enum LsvError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("node count below minimum: {axis} has {count} nodes, need at least 3")]
    TooFewNodes { axis: &'static str, count: usize },

    #[error("spot {coordinate}={value} lies outside the computational domain [{min}, {max}]")]
    SpotOutsideDomain {
        coordinate: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("cost exponent p={0} must be greater than 1")]
    InvalidExponent(f64),

    #[error("cost derivative undefined at x={x} (x_bar={x_bar}, s={s})")]
    CostDomain { x: f64, x_bar: f64, s: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("singular tridiagonal system on {direction} line {line} at row {row} (pivot {pivot:e})")]
    SingularSystem {
        direction: &'static str,
        line: usize,
        row: usize,
        pivot: f64,
    },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("price {price} violates the {bound} bound {limit}")]
    ArbitrageBound {
        price: f64,
        bound: &'static str,
        limit: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cannot retract a zero vector (factor block norm {norm:e})")]
    ZeroVector { norm: f64 },

    #[error("point is not on the target manifold (defining residual {residual:e})")]
    NotOnManifold { residual: f64 },

    #[error("point is not near the target manifold (distance {distance:e} > {limit:e})")]
    NotNearManifold { distance: f64, limit: f64 },

    #[error("vector is not tangent at the base point (normal component {normal:e})")]
    NotTangent { normal: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate family: |P|^2 + |Q|^2 = {norm:e} at z = {z}, lambda = {lambda:e}")]
    DegenerateFamily { norm: f64, z: String, lambda: f64 },

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("window [{lo}, {hi}] contains {rows} grid rows")]
    EmptyWindow { lo: f64, hi: f64, rows: usize },

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("normal equations ill-conditioned (condition number {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("heat flow did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("heat flow unstable: energy increased for {consecutive} consecutive iterations at iteration {iteration}")]
    UnstableStep { iteration: usize, consecutive: usize },

    #[error("one of a, b, c, d vanishes ({0})")]
    Nondegeneracy(String),

    #[error("degenerate plane: Gram determinant {gram:e}")]
    DegeneratePlane { gram: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

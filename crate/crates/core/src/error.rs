use thiserror::Error;

pub type Result<T, E = GldError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GldError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("matrix is singular (pivot {pivot:e} at row {row})")]
    SingularMatrix { row: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("local block of cell {cell} is singular: {source}")]
    Assembly {
        cell: usize,
        #[source]
        source: Box<GldError>,
    },

    #[error("newton iteration did not converge at step {step} after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("newton iteration diverged at step {step} (non-finite residual)")]
    Divergence { step: usize },

    #[error("energy increased at step {step}: {previous:e} -> {current:e} (tolerance {tolerance:e})")]
    StabilityViolation {
        step: usize,
        previous: f64,
        current: f64,
        tolerance: f64,
    },

    #[error("problem too large for the dense oracle: {cells} cells (limit {limit})")]
    TooLarge { cells: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

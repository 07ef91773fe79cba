use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("node range invalid: {0}")]
    NodeRange(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("fBm covariance is not positive definite at {nodes} nodes")]
    Covariance { nodes: usize },

    #[error("blow-up: |Y| = {value:e} exceeds {bound:e} at node {node}")]
    BlowUp { node: usize, value: f64, bound: f64 },

    #[error("matrix is defective beyond tolerance (defect {defect:e}); only diagonalizable matrices are supported")]
    Defective { defect: f64 },

    #[error("A_alpha is not exponentially stable (max Re = {max_re}); the coefficient equation violates the non-resonance condition")]
    NotStable { max_re: f64 },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("Lyapunov-Perron iteration does not contract (ratio {ratio:.3} over 5 iterations at step {iteration}); shrink cutoff_R or |xi|")]
    NonContraction { iteration: usize, ratio: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asymmetry:.3e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("{context}: matrix is not positive definite")]
    NotPositiveDefinite { context: &'static str },

    #[error("empirical covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("degenerate correlation |rho| >= 1 between nodes {i} and {j}")]
    DegenerateCorrelation { i: usize, j: usize },

    #[error("belief propagation breakdown: nonpositive precision at node {node}")]
    BpBreakdown { node: usize },

    #[error("nonpositive variance at node {node} during determinant accumulation")]
    NonpositiveVariance { node: usize },

    #[error("C({n}, {k}) = {count} subsets exceeds the enumeration cap {cap}; use the greedy learner")]
    EnumerationTooLarge { n: usize, k: usize, count: u128, cap: u128 },

    #[error("objective increased by {delta:.3e} at iteration {iteration}")]
    MonotonicityViolation { iteration: usize, delta: f64 },

    #[error("initialization failed: {0}")]
    InitFailure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

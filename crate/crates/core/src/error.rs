use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input matrix does not span an n-dimensional subspace.
    #[error("degenerate plane: input matrix is rank deficient (column {column})")]
    DegeneratePlane { column: usize },

    /// Two planes (or a plane and a tensor) do not live in compatible spaces.
    #[error("dimension mismatch: expected ({expected_ambient}, {expected_tangent}), got ({got_ambient}, {got_tangent})")]
    DimensionMismatch {
        expected_ambient: usize,
        expected_tangent: usize,
        got_ambient: usize,
        got_tangent: usize,
    },

    /// A scalar argument lies outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Finite-difference stencil would leave the grid under a fixed boundary.
    #[error("stencil error: node {node:?} too close to a fixed boundary (axis {axis})")]
    Stencil { node: Vec<usize>, axis: usize },

    /// The eigen-oracle dimension cap (n, m <= 6) was exceeded.
    #[error("cap error: eigen-oracle limited to n, m <= {cap}, got n = {n}, m = {m}")]
    Cap { n: usize, m: usize, cap: usize },

    /// A flow step produced a non-finite value.
    #[error("blow-up detected at node {node:?}, component {component}")]
    Blowup { node: Vec<usize>, component: usize },

    /// Soliton inequality check invoked on a patch that fails the residual test.
    #[error("not a soliton: residual max-norm {residual:.3e} exceeds threshold {threshold:.3e}")]
    NotASoliton { residual: f64, threshold: f64 },

    /// A run hypothesis (slope bound, region membership) was violated.
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
}

pub type Result<T> = std::result::Result<T, Error>;

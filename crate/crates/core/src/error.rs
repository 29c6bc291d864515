use ndarray::Array2;
use num_complex::Complex;
use thiserror::Error;

use crate::scalar::Real;

/// Errors shared across the estimation and selection modules.
///
/// The scalar parameter keeps iterates and tolerances in the caller's
/// precision; most variants are precision-free.
#[derive(Debug, Error)]
pub enum Error<T: Real> {
    #[error("need at least {need} samples of dimension {dim}, got {got}")]
    TooFewSamples { dim: usize, need: usize, got: usize },

    #[error("sample {index} has zero norm")]
    DegenerateSample { index: usize },

    #[error("sample {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },

    #[error("matrix is {rows}x{cols}, expected square of side {expected}")]
    BadShape {
        rows: usize,
        cols: usize,
        expected: usize,
    },

    #[error("matrix departs from Hermitian symmetry by {deviation} (relative)")]
    NotHermitian { deviation: T },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("diagonal entry {index} is not strictly positive")]
    NonPositiveDiagonal { index: usize },

    #[error("trace {trace} departs from the required value {expected}")]
    BadTrace { trace: T, expected: T },

    #[error("coherence magnitude {value} at ({row},{col}) exceeds 1")]
    CoherenceOutOfRange { row: usize, col: usize, value: T },

    #[error("fixed point not reached after {iterations} iterations (relative change {delta})")]
    NoConvergence {
        iterations: usize,
        delta: T,
        /// Last iterate, so callers that can tolerate a loose fixed point
        /// may keep going.
        last: Box<Array2<Complex<T>>>,
    },

    #[error("objective is not finite anywhere on the search interval")]
    NonFiniteObjective,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

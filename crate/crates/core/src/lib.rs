//! Numerical core for distributed-scatterer SAR interferometry built on
//! complex elliptical models: shape-matrix estimation, shape-based
//! homogeneous-pixel selection, generalized-Gaussian scale fitting, phase
//! linking, and the simulation machinery that exercises all of it.
//!
//! The math is generic over the floating scalar through [`scalar::Real`];
//! the aliases below fix the `f64` instantiation that the pipeline uses.

pub mod acaf;
pub mod ces;
pub mod cgg;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod phase_linking;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod stack;

pub use error::Error;
pub use scalar::Real;

/// Complex scalar in the default compute precision.
pub type C64 = num_complex::Complex<f64>;
/// Complex scalar in storage precision.
pub type C32 = num_complex::Complex<f32>;

/// Shape matrix in compute precision.
pub type ShapeMatrix64 = ces::ShapeMatrix<f64>;
/// Coherence matrix in compute precision.
pub type CoherenceMatrix64 = ces::CoherenceMatrix<f64>;
/// Phase history in compute precision.
pub type PhaseHistory64 = phase_linking::PhaseHistory<f64>;
/// SLC stack in compute precision.
pub type SlcStack64 = stack::SlcStack<f64>;
/// Scene specification in compute precision.
pub type SceneSpec64 = sim::SceneSpec<f64>;

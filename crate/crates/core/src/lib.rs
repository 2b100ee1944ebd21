//! Label-free machine-learning PDE solvers on pixel grids.
//!
//! The crate couples a small reverse-mode autodiff tape with a weak-form
//! residual engine built from convolution stencils, plus a classical
//! finite-element reference solver, dataset generation for boundary value
//! problems, encoder-decoder network models (deterministic and Bayesian),
//! and training loops whose loss is the reduced discretized residual.

pub mod bundle;
pub mod dataset;
pub mod error;
pub mod evalrep;
pub mod fem;
pub mod mesh;
pub mod nn;
pub mod ops;
pub mod physics;
pub mod polygon;
pub mod preset;
pub mod residual;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};
pub use tensor::FieldTensor;

/// Training-precision tensor.
pub type FieldTensor32 = FieldTensor<f32>;
/// Verification-precision tensor.
pub type FieldTensor64 = FieldTensor<f64>;
/// Training-precision tape.
pub type Tape32 = tape::Tape<f32>;
/// Verification-precision tape.
pub type Tape64 = tape::Tape<f64>;

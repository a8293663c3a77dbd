//! Structure-aware, transformation-invariant table encoding.

pub mod error;
pub mod harness;
pub mod linearize;
pub mod model;
pub mod scalar;
pub mod structure;
pub mod table;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision model used for training runs.
pub type Model = model::ToyModel<f32>;
/// Double-precision model used for gradient checks.
pub type ModelF64 = model::ToyModel<f64>;
pub type Optimizer = model::Adam<f32>;

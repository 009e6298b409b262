//! Deep Kalman Filters: nonlinear state-space models trained with a
//! structured variational posterior.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gaussian;
pub mod inference;
pub mod linear;
pub mod model;
pub mod nn;
pub mod param;
pub mod recognition;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Two-layer ReLU networks trained to interpolate noisy labels, with tools to
//! test whether the resulting max-margin solutions overfit benignly.

pub mod constructions;
pub mod data;
pub mod error;
pub mod experiments;
pub mod kkt;
pub mod net;
pub mod nnls;
pub mod rng;
pub mod train;
pub mod univariate;

pub use error::{Error, Result};

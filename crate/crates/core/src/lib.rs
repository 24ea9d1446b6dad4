//! Cognitive diagnosis models with Kolmogorov–Arnold network components.

pub mod autodiff;
pub mod cdm;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod kan;
pub mod train;
pub mod viz;

pub use error::{Error, Result};

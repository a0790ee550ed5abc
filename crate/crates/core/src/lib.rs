//! Correlation-alignment distillation losses, matrix-based Rényi entropy
//! estimators, boundary-aware pixel sampling and weight soups, plus a small
//! deterministic student/teacher harness.

pub mod cli;
pub mod config;
pub mod entropy;
pub mod error;
pub mod format;
pub mod harness;
pub mod linalg;
pub mod pixel_losses;
pub mod repr_loss;
pub mod sampling;
pub mod soup;

pub use error::{Error, Result};
pub use linalg::Tensor2D;

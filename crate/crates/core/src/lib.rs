//! Pseudo-projected gradients, entropy-coupled dual problems and the recovery
//! of measure-transporting minimizers, on centered intervals and discs.

pub mod cli;
pub mod dualsolver;
pub mod envelope;
pub mod error;
pub mod geometry;
pub mod integrands;
pub mod limitflow;
pub mod linalg;
pub mod primal;
pub mod pseudograd;
pub mod testspace;
pub mod transforms;

pub use error::{Error, Result};

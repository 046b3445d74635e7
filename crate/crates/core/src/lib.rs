//! Divergence-preserving linear projections between Gaussian distributions.

pub mod acceptance;
pub mod cli;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod projections;
pub mod refine;
pub mod synth;

pub use error::{Error, Result};

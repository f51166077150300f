//! Density-based topology optimization of 2D linear elastic structures with
//! sigmoidal mirror descent on a projected latent variable.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod fields;
pub mod grid;
pub mod linsolve;
pub mod physics;
pub mod simpl;

pub use error::{Error, Result};

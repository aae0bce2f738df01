//! Stochastic landmark dynamics: models, guided diffusion bridges and
//! MCMC for landmark matching and template estimation.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod guiding;
pub mod inference;
pub mod linalg;
pub mod models;
pub mod scalar;

pub use error::{Error, Result};

//! Controllable trajectory diffusion.
//!
//! A pairwise-preference scorer rates how well a future trajectory satisfies a
//! constraint, and a conditional denoising diffusion model generates futures
//! steered by that rating.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod encoder;
pub mod pipeline;
pub mod eval;
pub mod error;
pub mod rng;
pub mod scoring;

pub use error::{Error, ErrorKind, Result};

//! Minimal reverse-mode differentiation over dense `f64` arrays.
//!
//! [`Graph`] records eagerly evaluated ops; [`Graph::backward`] sweeps the
//! record in reverse and leaves gradients on trainable leaves. Parameters live
//! in a [`ParamStore`] and are bound into a fresh graph each step, and [`Adam`]
//! applies the resulting gradients back to the store.

mod gemm;
mod graph;
pub mod nn;
mod optim;
mod params;
mod tensor;

pub use graph::{sigmoid, Graph, Var, LEAKY_SLOPE};
pub use optim::Adam;
pub use params::ParamStore;
pub use tensor::Tensor;

#[cfg(test)]
mod tests;

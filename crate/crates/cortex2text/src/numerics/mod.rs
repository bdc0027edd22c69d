//! Minimal reverse-mode automatic differentiation over dense matrices,
//! the neural building blocks the transformer needs, the Adam optimizer,
//! and a finite-difference gradient checker.
//!
//! Graphs are built per forward pass and dropped after backward
//! (define-by-run). All arithmetic is 64-bit; the checkpoint container
//! downcasts to 32-bit on disk.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use graph::{Graph, Var};
pub use tensor::Tensor;

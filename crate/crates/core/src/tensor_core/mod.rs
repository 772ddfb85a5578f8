//! Minimal dense-tensor reverse-mode differentiation.
//!
//! A [`Graph`] records each operation as it executes (a dynamic tape), so the
//! node order is already topological and [`Graph::backward`] is one reverse
//! sweep. Values are `f64` throughout. Ops that need a hand-written gradient
//! (fusedmax) plug in through [`CustomOp`].

mod custom;
mod graph;
mod tensor;

pub use custom::{register_custom, CustomOp};
pub use graph::{Graph, Var};
pub(crate) use graph::softmax_in_place;
pub use tensor::Tensor;

//! Dense `f64` tensors with reverse-mode automatic differentiation.

pub mod checkpoint;
mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use optim::{sgd_step, Sgd};
pub use params::{Bound, Gradients, ParamStore};
pub use tensor::Tensor;

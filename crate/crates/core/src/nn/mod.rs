//! A small f64 tensor library with tape-based reverse-mode differentiation,
//! the layers the three models need, Adam, and finite-difference checking.

mod audio;
mod conv;
pub mod gradcheck;
mod graph;
pub mod layers;
mod norm;
mod ops;
pub mod optim;
mod params;
mod recurrent;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::{flat_index, sigmoid};
pub use optim::{apply_buffer_updates, Adam};
pub use params::{init, ParamId, ParamStore};
pub use tensor::{matmul2d, Tensor};

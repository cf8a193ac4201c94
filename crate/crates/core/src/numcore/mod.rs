//! Tensors, reverse-mode autodiff, a seeded generator, and the vector primitives
//! (projection, softmax, min-max normalization, sigmoid) the editor is built from.

mod autodiff;
mod real;
mod rng;
mod tensor;
mod vecops;

pub use autodiff::{finite_difference, Gradients, Graph, Var};
pub use real::Real;
pub use rng::Rng;
pub use tensor::{dot, matmul, matmul_at, matmul_bt, Tensor};
pub use vecops::{minmax_normalize, norm, orthogonal_component, project_onto, sigmoid, softmax, softmax_in_place};

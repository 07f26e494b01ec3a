//! Tensors, the differentiable kernel set and a finite-difference gradient checker.

mod gradcheck;
mod graph;
pub mod kernels;
mod real;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, MIN_COORDS_PER_PARAM};
pub use graph::{Gradients, Graph, ParamSource, ParamValues, Var};
pub use kernels::{gelu_map, matmul, softmax_rows, tanh_map, Mask};
pub use real::Real;
pub use tensor::{LrGroup, ParamId, ParamStore, Parameter, Tensor};

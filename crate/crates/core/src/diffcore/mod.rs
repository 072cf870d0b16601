//! Dense tensors, recorded reverse-mode differentiation, and Adam.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::finite_difference_check;
pub use graph::{Gradients, Graph, Var, NORM_EPS};
pub use params::{ParamId, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;

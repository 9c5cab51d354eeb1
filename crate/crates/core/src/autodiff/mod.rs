//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{background_probability, sigmoid, softmax, BackgroundMode, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;

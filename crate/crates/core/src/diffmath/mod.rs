//! Dense tensors, reverse-mode differentiation and the distribution
//! primitives (softmax, KL, Jensen-Shannon) the rest of the crate builds on.

mod prob;
mod tape;
mod tensor;

pub use prob::{js_divergence, kl_divergence, softmax, ProbVec};
pub(crate) use prob::log2_floored;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::argmin;

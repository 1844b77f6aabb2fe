//! Dense reverse-mode differentiation and the neural primitives built on it.

pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use nn::{gru_sequence, gru_step, mlp_forward, GruParams, MlpParams};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{glorot_uniform, Gradients, ParamId, ParamStore};
pub use tape::{cosine, softmax, AutodiffError, Tape, Var, COSINE_EPS, LOG_CLAMP};
pub use tensor::{Shape, Tensor};

#[cfg(test)]
mod tests;

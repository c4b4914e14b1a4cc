//! Differentiable-computation substrate: tensors, dense networks with
//! reverse-mode gradients, and an adaptive optimizer. Everything runs in
//! `f64` on the CPU.

pub mod adam;
pub mod mlp;
pub mod norm;
pub mod rng;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Activation, ForwardCache, Mlp, MlpGrads};
pub use norm::Normalization;
pub use tensor::{cosine_sim, cosine_sim_backward, cosine_sim_flagged, Tensor};

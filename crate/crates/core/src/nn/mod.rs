//! Dense-network numerical core: tensors, layers, losses, backprop and Adam.

pub mod activation;
pub mod adam;
pub mod loss;
pub mod mlp;
mod real;
mod tensor;

pub use activation::Activation;
pub use adam::{AdamHyper, AdamState};
pub use loss::{bce_loss, mae, mae_loss};
pub use mlp::{GradAt, ManifestEntry, Mlp, MlpParams, MlpSpec, Tape};
pub use real::Real;
pub use tensor::DenseTensor;

//! Small deterministic neural-network toolkit: dense and single-channel
//! convolution layers, activations, Adam, checkpoints and gradient checks.

mod adam;
mod checkpoint;
mod gradcheck;
pub mod kernels;
mod network;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, kink_tolerant_error, relative_error, squared_error_loss, GradCheckReport, REL_ERROR_FLOOR};
pub use network::{Activation, LayerSpec, Network, NetworkSpec, EXP_CLAMP};
pub use tensor::Tensor;

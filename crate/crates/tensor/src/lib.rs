//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Provides exactly the operator set needed by a small convolutional
//! encoder-decoder: dense, depthwise and 2x2 transposed convolutions, 2x2 max
//! pooling, bilinear 2x upsampling, PReLU, inverted dropout, addition, channel
//! concatenation and an MSE loss, plus Adam and a binary checkpoint format.
//!
//! Everything is generic over [`Real`] so the same graph can run in `f32` for
//! training and in `f64` for finite-difference checks.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod param;
mod scalar;
pub mod tape;
mod tensor;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use error::{CheckpointError, TensorError};
pub use kernels::ConvGeom;
pub use param::{kaiming_uniform, ParamId, ParamStore, Parameter};
pub use scalar::Real;
pub use tape::{Mode, Tape, Var};
pub use tensor::Tensor;

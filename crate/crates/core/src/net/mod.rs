//! Bayes-DIC Net: an encoder-decoder with dropout in its residual blocks,
//! trained on MSE and sampled with Monte-Carlo dropout at inference.

mod blocks;
mod config;
mod mc;
mod model;
mod train;

use thiserror::Error;

pub use blocks::{Conv, Deconv, Depthwise, DownBlock, FusionBlock, Head, Prelu, SmallBlock, UpBlock, WideBlock};
pub use config::NetworkConfig;
pub use mc::{mc_infer, UncertaintyOutput};
pub use model::{scope, split_field, stack_fields, stack_pairs, DecoderStage, EncoderStage, Model};
pub use dicforge_tensor::{Checkpoint, CheckpointError, Mode};
pub use train::{EpochStats, TrainConfig, TrainSet, Trainer};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] dicforge_tensor::TensorError),
    #[error(transparent)]
    Checkpoint(#[from] dicforge_tensor::CheckpointError),
    #[error("i/o error: {0}")]
    Io(std::io::Error),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Data(String),
}

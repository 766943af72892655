//! Trainable noise predictor: a small U-shaped convolutional network with
//! timestep conditioning, its differentiation engine, Adam and the
//! denoising training loop.

mod checkpoint;
mod graph;
mod model;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use graph::{Graph, Var};
pub use model::{timestep_embedding, DenoiserModel, ModelConfig};
pub use tensor::Tensor;
pub use train::{
    loss_and_grad, loss_and_grad_for, train, Adam, Gradients, TrainConfig, TrainReport,
};

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty batch or corpus")]
    EmptyBatch,
    #[error("non-finite loss{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFiniteLoss { step: Option<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

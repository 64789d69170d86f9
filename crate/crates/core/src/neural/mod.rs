//! Minimal CNN stack for the dueling Q-network: layers, backprop, RMSprop
//! and a checkpoint format.

mod checkpoint;
mod layers;
mod network;
mod optim;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{conv2d, conv_output_size, relu_backward, relu_in_place, Conv2d, Linear};
pub use network::{backprop_loss, Architecture, ConvSpec, DuelingQNetwork, Gradients, QOutput};
pub use optim::RmsProp;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("{height}x{width} input is too small for kernel {kernel} with stride {stride}")]
    IncompatibleConv { height: usize, width: usize, kernel: usize, stride: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite target at batch index {0}")]
    NonFiniteTarget(usize),
    #[error("action {action} out of range for {actions} actions")]
    ActionOutOfRange { action: usize, actions: usize },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error("architecture mismatch: checkpoint has {found}, network expects {expected}")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("tensor `{0}` missing from checkpoint")]
    MissingTensor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

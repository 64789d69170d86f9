//! Multi-agent dueling double DQN for signal-free intersection control.

pub mod agents;
pub mod baselines;
pub mod control;
pub mod error;
pub mod harness;
pub mod neural;
pub mod observation;
pub mod scalar;
pub mod sim;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type QNetwork = neural::DuelingQNetwork<f32>;
pub type QNetwork64 = neural::DuelingQNetwork<f64>;

use thiserror::Error;

use crate::agents::AgentError;
use crate::neural::NeuralError;
use crate::observation::ObservationError;
use crate::sim::SimError;

/// Top-level error; [`Error::kind`] maps it to the CLI exit-code classes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("missing checkpoint for seed {seed}: {path}")]
    MissingCheckpoint { seed: u64, path: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Contract,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Usage(_) => ErrorKind::Config,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::MissingCheckpoint { .. } => ErrorKind::Io,
            Error::Sim(SimError::Io(_) | SimError::Csv(_) | SimError::Parse { .. }) => ErrorKind::Io,
            Error::Sim(SimError::InvalidScenario(_)) => ErrorKind::Config,
            Error::Observation(ObservationError::Io(_) | ObservationError::Format(_)) => ErrorKind::Io,
            Error::Neural(
                NeuralError::Io(_)
                | NeuralError::BadMagic
                | NeuralError::UnsupportedVersion { .. }
                | NeuralError::Truncated
                | NeuralError::Malformed(_)
                | NeuralError::MissingTensor(_),
            ) => ErrorKind::Io,
            Error::Neural(NeuralError::ArchitectureMismatch { .. } | NeuralError::InvalidArchitecture(_)) => ErrorKind::Config,
            _ => ErrorKind::Contract,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! Discrete-time microscopic simulator of a 4-way, 1-lane intersection.

pub mod collision;
pub mod geometry;
pub mod scenario;
pub mod trajectory;
pub mod vehicle;
pub mod world;

use thiserror::Error;

pub use geometry::{Approach, Intention, IntersectionGeometry, LayoutParams, Path, Pose, Route, Vec2};
pub use scenario::{ScenarioSpec, Spawn};
pub use vehicle::{step_vehicle, SpeedLimits, VehicleDims, VehicleId, VehicleState};
pub use world::{CollisionEvent, StepReport, VehicleStep, WorldConfig, WorldState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no command for active vehicle {0}")]
    MissingCommand(VehicleId),
    #[error("vehicle {0}: command {1} is not a finite speed")]
    InvalidCommand(VehicleId, f64),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

use std::fmt;

use serde::{Deserialize, Serialize};

use super::geometry::Route;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Rate limits of the low-level speed controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimits {
    /// m/s²
    pub accel: f64,
    /// m/s², positive
    pub decel: f64,
    /// m/s
    pub max_speed: f64,
}

impl Default for SpeedLimits {
    fn default() -> Self {
        Self { accel: 2.6, decel: 4.5, max_speed: 15.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        Self { length: 4.5, width: 1.8 }
    }
}

/// One path-bound vehicle. `s` is the arc length of the vehicle centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub route: Route,
    pub s: f64,
    pub speed: f64,
    pub commanded_speed: f64,
    pub length: f64,
    pub width: f64,
    pub done: bool,
    pub collided: bool,
}

impl VehicleState {
    pub fn new(id: VehicleId, route: Route, dims: VehicleDims) -> Self {
        Self {
            id,
            route,
            s: 0.0,
            speed: 0.0,
            commanded_speed: 0.0,
            length: dims.length,
            width: dims.width,
            done: false,
            collided: false,
        }
    }

    pub fn is_active(&self) -> bool {
        !self.done
    }

    pub fn front(&self) -> f64 {
        self.s + self.length / 2.0
    }

    pub fn rear(&self) -> f64 {
        self.s - self.length / 2.0
    }
}

/// Advances one vehicle by `dt` seconds along a path of length `path_length`.
///
/// Speed moves toward `command` limited by the acceleration/deceleration
/// bounds; position advances by the trapezoidal integral of speed. The
/// vehicle is marked done once it reaches the end of its path. Returns the
/// distance travelled this step.
pub fn step_vehicle(v: &mut VehicleState, command: f64, dt: f64, limits: &SpeedLimits, path_length: f64) -> f64 {
    debug_assert!(dt > 0.0);
    if v.done {
        return 0.0;
    }
    let command = command.clamp(0.0, limits.max_speed);
    v.commanded_speed = command;
    let dv = (command - v.speed).clamp(-limits.decel * dt, limits.accel * dt);
    let new_speed = (v.speed + dv).clamp(0.0, limits.max_speed);
    let advance = 0.5 * (v.speed + new_speed) * dt;
    let new_s = (v.s + advance).min(path_length);
    let ds = new_s - v.s;
    v.s = new_s;
    v.speed = new_speed;
    if v.s >= path_length {
        v.done = true;
    }
    ds
}

//! Reference controllers: the random policy and signal-controlled traffic.

mod driver;
mod signals;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

pub use driver::{car_follow_command, safe_speed, ConflictMatrix, DriverParams, SignalController};
pub use signals::{atl_step, fttl_state_at, webster_cycle, Phase, PhaseGroup, SignalPlan, SignalState};

use crate::control::Controller;
use crate::error::{Error, Result};
use crate::sim::{Approach, Intention, ScenarioSpec, Spawn, VehicleId, WorldState};

/// Uniform action index, ignoring the observation entirely.
pub fn random_policy<R: Rng + ?Sized>(actions: usize, rng: &mut R) -> usize {
    rng.gen_range(0..actions)
}

/// Every vehicle draws a uniform speed command each step, in id order.
#[derive(Debug, Clone)]
pub struct RandomController {
    speeds: Vec<f64>,
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(speeds: Vec<f64>, rng: ChaCha8Rng) -> Self {
        Self { speeds, rng }
    }
}

impl Controller for RandomController {
    fn commands(&mut self, world: &WorldState) -> Result<BTreeMap<VehicleId, f64>> {
        Ok(world
            .active_vehicles()
            .map(|v| (v.id, self.speeds[random_policy(self.speeds.len(), &mut self.rng)]))
            .collect())
    }
}

/// Poisson arrivals split evenly over the four approaches, uniform intentions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    /// Total vehicles per hour over all approaches.
    pub flow_rate: f64,
}

impl ArrivalProcess {
    pub fn new(flow_rate: f64) -> Result<Self> {
        if !(flow_rate.is_finite() && flow_rate >= 0.0) {
            return Err(Error::Config(format!("flow rate {flow_rate} must be finite and non-negative")));
        }
        Ok(Self { flow_rate })
    }

    /// Vehicles per second on one approach.
    pub fn approach_rate(&self) -> f64 {
        self.flow_rate / 4.0 / 3600.0
    }

    /// All spawns with time below `horizon` seconds. Each approach draws its
    /// arrivals to completion before the next, so approaches are independent
    /// of each other's counts.
    pub fn generate<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> ScenarioSpec {
        let mut spawns = Vec::new();
        if self.flow_rate > 0.0 {
            let gap = Exp::new(self.approach_rate()).expect("positive rate");
            for approach in Approach::ALL {
                let mut t = gap.sample(rng);
                while t < horizon {
                    spawns.push(Spawn { approach, intention: Intention::from_index(rng.gen_range(0..3)), time: t });
                    t += gap.sample(rng);
                }
            }
        }
        spawns.sort_by(|a, b| a.time.total_cmp(&b.time));
        ScenarioSpec::new(spawns)
    }
}

//! Closed-loop execution of a world under any speed controller.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use crate::agents::{assign_agent, greedy_action, PolicySet, AGENT_COUNT};
use crate::error::{Error, Result};
use crate::neural::DuelingQNetwork;
use crate::observation::{RenderParams, StackTracker};
use crate::sim::trajectory::{TrajectoryRecorder, TrajectoryRow};
use crate::sim::{StepReport, VehicleId, WorldState};
use crate::trainer::{compute_reward, MOVING_THRESHOLD};

/// Produces one speed command per active vehicle each step.
pub trait Controller {
    fn commands(&mut self, world: &WorldState) -> Result<BTreeMap<VehicleId, f64>>;

    /// Called after every world step.
    fn observe(&mut self, _world: &WorldState, _report: &StepReport) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunLimits {
    pub max_steps: u64,
    /// End the run at the first collision (training-style episodes).
    pub stop_on_collision: bool,
    /// Keep stepping while spawns are still pending, even with no vehicle active.
    pub wait_for_pending: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunResult {
    pub steps: u64,
    /// Undiscounted per-vehicle return under the reward rule.
    pub returns: BTreeMap<VehicleId, f64>,
    pub collided: Vec<VehicleId>,
    pub completed: Vec<VehicleId>,
    pub trajectory: Vec<TrajectoryRow>,
}

impl RunResult {
    /// Mean of per-vehicle returns, 0 for an empty run.
    pub fn mean_return(&self) -> f64 {
        if self.returns.is_empty() {
            0.0
        } else {
            self.returns.values().sum::<f64>() / self.returns.len() as f64
        }
    }
}

/// Steps `world` under `controller` until no vehicle remains (and nothing is
/// pending when `wait_for_pending`), a limit is hit, or a collision stops it.
pub fn run_controlled<C: Controller + ?Sized>(
    world: &mut WorldState,
    controller: &mut C,
    limits: RunLimits,
    reward_k: f64,
    record: bool,
) -> Result<RunResult> {
    let mut result = RunResult::default();
    let mut recorder = TrajectoryRecorder::new();
    if record {
        recorder.record(world);
    }
    while result.steps < limits.max_steps {
        let idle = world.active_count() == 0;
        if idle && (!limits.wait_for_pending || world.pending_spawns() == 0) {
            break;
        }
        let commands = if idle { BTreeMap::new() } else { controller.commands(world)? };
        let report = world.step(&commands)?;
        controller.observe(world, &report);
        result.steps += 1;
        if record {
            recorder.record(world);
        }
        for st in &report.vehicles {
            let r = compute_reward(st.delta_s, st.speed >= MOVING_THRESHOLD, st.collided, st.completed, reward_k);
            *result.returns.entry(st.id).or_insert(0.0) += r;
            if st.collided {
                result.collided.push(st.id);
            } else if st.completed {
                result.completed.push(st.id);
            }
        }
        if limits.stop_on_collision && report.any_collision() {
            break;
        }
    }
    result.trajectory = recorder.into_rows();
    Ok(result)
}

/// Greedy actions for a set of observations, each tagged with the agent that
/// owns it. One batched forward pass per agent; results follow input order.
pub fn batched_greedy(networks: &[&DuelingQNetwork<f32>], items: &[(usize, &[f32])]) -> Result<Vec<usize>> {
    let mut actions = vec![0; items.len()];
    let mut input = Vec::new();
    for (agent, net) in networks.iter().enumerate() {
        let members: Vec<usize> = (0..items.len()).filter(|&i| items[i].0 == agent).collect();
        if members.is_empty() {
            continue;
        }
        input.clear();
        for &i in &members {
            input.extend_from_slice(items[i].1);
        }
        let out = net.forward(&input, members.len())?;
        for (row, &i) in members.iter().enumerate() {
            actions[i] = greedy_action(out.q_row(row));
        }
    }
    Ok(actions)
}

/// Drives every vehicle with the greedy action of its intention agent.
#[derive(Debug, Clone)]
pub struct LearnedController {
    policy: PolicySet<f32>,
    tracker: StackTracker,
    speeds: Vec<f64>,
    decisions: u64,
    inference: Duration,
}

impl LearnedController {
    pub fn new(policy: PolicySet<f32>, params: RenderParams, frame_stack: usize, speeds: Vec<f64>) -> Result<Self> {
        if policy.networks.len() != AGENT_COUNT {
            return Err(Error::Contract(format!("expected {AGENT_COUNT} networks, got {}", policy.networks.len())));
        }
        if policy.architecture().actions != speeds.len() {
            return Err(Error::Config(format!(
                "network has {} actions but {} speed commands are configured",
                policy.architecture().actions,
                speeds.len()
            )));
        }
        Ok(Self { policy, tracker: StackTracker::new(params, frame_stack), speeds, decisions: 0, inference: Duration::ZERO })
    }

    /// Per-vehicle decisions taken so far.
    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    /// Mean wall-clock seconds of network forward passes per decision.
    pub fn mean_inference_secs(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.inference.as_secs_f64() / self.decisions as f64
        }
    }
}

impl Controller for LearnedController {
    fn commands(&mut self, world: &WorldState) -> Result<BTreeMap<VehicleId, f64>> {
        self.tracker.update(world)?;
        let mut ids = Vec::new();
        let mut obs = Vec::new();
        for v in world.active_vehicles() {
            let stack = self.tracker.get(v.id).expect("tracker covers active vehicles");
            ids.push(v.id);
            obs.push((assign_agent(v.route.intention), stack.to_vec()));
        }
        let items: Vec<(usize, &[f32])> = obs.iter().map(|(a, o)| (*a, o.as_slice())).collect();
        let start = Instant::now();
        let nets: Vec<_> = self.policy.networks.iter().collect();
        let actions = batched_greedy(&nets, &items)?;
        self.inference += start.elapsed();
        self.decisions += ids.len() as u64;
        Ok(ids.into_iter().zip(actions).map(|(id, a)| (id, self.speeds[a])).collect())
    }
}

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::collision::Obb;
use super::geometry::{IntersectionGeometry, Pose, Route};
use super::scenario::{ScenarioSpec, Spawn};
use super::vehicle::{step_vehicle, SpeedLimits, VehicleDims, VehicleId, VehicleState};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Step length in seconds.
    pub dt: f64,
    pub limits: SpeedLimits,
    pub vehicle: VehicleDims,
    /// Colliding vehicles leave the world immediately (continuous-flow runs).
    pub remove_collided: bool,
    /// Minimum bumper gap behind the last vehicle on an approach before a
    /// pending spawn may enter.
    pub spawn_gap: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            limits: SpeedLimits::default(),
            vehicle: VehicleDims::default(),
            remove_collided: false,
            spawn_gap: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub a: VehicleId,
    pub b: VehicleId,
    pub step: u64,
}

/// What happened to one vehicle during a world step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleStep {
    pub id: VehicleId,
    pub route: Route,
    pub delta_s: f64,
    pub speed: f64,
    /// Reached the end of its route this step.
    pub completed: bool,
    /// Involved in a collision this step.
    pub collided: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Index of the step after it was applied.
    pub step: u64,
    pub vehicles: Vec<VehicleStep>,
    pub collisions: Vec<(VehicleId, VehicleId)>,
    pub spawned: Vec<VehicleId>,
}

impl StepReport {
    pub fn any_collision(&self) -> bool {
        !self.collisions.is_empty()
    }

    pub fn get(&self, id: VehicleId) -> Option<&VehicleStep> {
        self.vehicles.iter().find(|v| v.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PendingSpawn {
    spawn: Spawn,
}

/// Complete simulation state. Cloning is cheap apart from the vehicle list;
/// the geometry is shared.
#[derive(Debug, Clone)]
pub struct WorldState {
    geometry: Arc<IntersectionGeometry>,
    config: WorldConfig,
    time_step_index: u64,
    vehicles: Vec<VehicleState>,
    collision_events: Vec<CollisionEvent>,
    pending: VecDeque<PendingSpawn>,
    next_id: u32,
}

impl WorldState {
    pub fn empty(geometry: Arc<IntersectionGeometry>, config: WorldConfig) -> Self {
        Self {
            geometry,
            config,
            time_step_index: 0,
            vehicles: Vec::new(),
            collision_events: Vec::new(),
            pending: VecDeque::new(),
            next_id: 0,
        }
    }

    /// Builds the world at time zero. Spawns at t = 0 are placed immediately;
    /// later spawns enter once their time is reached and the spawn point is clear.
    pub fn spawn_scenario(geometry: Arc<IntersectionGeometry>, config: WorldConfig, spec: &ScenarioSpec) -> Result<Self, SimError> {
        spec.validate()?;
        let mut world = Self::empty(geometry, config);
        let mut spawns = spec.spawns.clone();
        // Stable: equal times keep file order.
        spawns.sort_by(|a, b| a.time.total_cmp(&b.time));
        world.pending = spawns.into_iter().map(|spawn| PendingSpawn { spawn }).collect();
        world.admit_pending();
        Ok(world)
    }

    pub fn geometry(&self) -> &Arc<IntersectionGeometry> {
        &self.geometry
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn time_step_index(&self) -> u64 {
        self.time_step_index
    }

    pub fn time(&self) -> f64 {
        self.time_step_index as f64 * self.config.dt
    }

    /// Every vehicle ever spawned, in id order, including finished ones.
    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn vehicles_mut(&mut self) -> &mut [VehicleState] {
        &mut self.vehicles
    }

    pub fn active_vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.vehicles.iter().filter(|v| v.is_active())
    }

    pub fn active_count(&self) -> usize {
        self.active_vehicles().count()
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        // Ids are assigned in insertion order.
        self.vehicles.get(id.0 as usize).filter(|v| v.id == id).or_else(|| self.vehicles.iter().find(|v| v.id == id))
    }

    pub fn collision_events(&self) -> &[CollisionEvent] {
        &self.collision_events
    }

    pub fn pending_spawns(&self) -> usize {
        self.pending.len()
    }

    /// No active vehicles and nothing left to spawn.
    pub fn is_finished(&self) -> bool {
        self.pending.is_empty() && self.active_count() == 0
    }

    pub fn pose_of(&self, v: &VehicleState) -> Pose {
        self.geometry.pose(v.route, v.s)
    }

    pub fn obb_of(&self, v: &VehicleState) -> Obb {
        Obb::from_pose(self.pose_of(v), v.length, v.width)
    }

    /// Places a vehicle directly. Used by tests and tools that need vehicles
    /// mid-route.
    pub fn insert_vehicle(&mut self, route: Route, s: f64, speed: f64) -> VehicleId {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        let mut v = VehicleState::new(id, route, self.config.vehicle);
        let len = self.geometry.route_path(route).length();
        v.s = s.clamp(0.0, len);
        v.speed = speed.clamp(0.0, self.config.limits.max_speed);
        v.commanded_speed = v.speed;
        self.vehicles.push(v);
        id
    }

    fn spawn_point_clear(&self, spawn: &Spawn) -> bool {
        let needed = self.config.vehicle.length + self.config.spawn_gap;
        self.active_vehicles()
            .filter(|v| v.route.approach == spawn.approach)
            .all(|v| v.s >= needed)
    }

    fn admit_pending(&mut self) -> Vec<VehicleId> {
        let now = self.time() + 1e-9;
        let mut admitted = Vec::new();
        let mut keep = VecDeque::with_capacity(self.pending.len());
        while let Some(p) = self.pending.pop_front() {
            if p.spawn.time <= now && self.spawn_point_clear(&p.spawn) {
                admitted.push(self.insert_vehicle(p.spawn.route(), 0.0, 0.0));
            } else {
                keep.push_back(p);
            }
        }
        self.pending = keep;
        admitted
    }

    /// Every pair of distinct active vehicles whose rectangles overlap,
    /// ordered by (lower id, higher id).
    pub fn detect_collisions(&self) -> Vec<(VehicleId, VehicleId)> {
        let active: Vec<(VehicleId, Obb)> = self.active_vehicles().map(|v| (v.id, self.obb_of(v))).collect();
        let mut pairs = Vec::new();
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                if active[i].1.overlaps(&active[j].1) {
                    pairs.push((active[i].0, active[j].0));
                }
            }
        }
        pairs
    }

    /// Advances the world by one step. `commands` must hold a speed command
    /// (m/s) for every active vehicle; commands for other ids are ignored.
    pub fn step(&mut self, commands: &BTreeMap<VehicleId, f64>) -> Result<StepReport, SimError> {
        for v in self.active_vehicles() {
            match commands.get(&v.id) {
                None => return Err(SimError::MissingCommand(v.id)),
                Some(c) if !c.is_finite() => return Err(SimError::InvalidCommand(v.id, *c)),
                Some(_) => {}
            }
        }
        let dt = self.config.dt;
        let limits = self.config.limits;
        let mut report = StepReport::default();
        for idx in 0..self.vehicles.len() {
            if !self.vehicles[idx].is_active() {
                continue;
            }
            let route = self.vehicles[idx].route;
            let len = self.geometry.route_path(route).length();
            let v = &mut self.vehicles[idx];
            let delta_s = step_vehicle(v, commands[&v.id], dt, &limits, len);
            report.vehicles.push(VehicleStep {
                id: v.id,
                route,
                delta_s,
                speed: v.speed,
                completed: v.done,
                collided: false,
            });
        }
        // Vehicles finishing this step are still checked at their final pose.
        let checked: Vec<(VehicleId, Obb)> = report
            .vehicles
            .iter()
            .map(|st| {
                let v = &self.vehicles[self.index_of(st.id)];
                (st.id, self.obb_of(v))
            })
            .collect();
        let step = self.time_step_index + 1;
        for i in 0..checked.len() {
            for j in i + 1..checked.len() {
                if checked[i].1.overlaps(&checked[j].1) {
                    let (a, b) = (checked[i].0, checked[j].0);
                    report.collisions.push((a, b));
                    self.collision_events.push(CollisionEvent { a, b, step });
                }
            }
        }
        for &(a, b) in &report.collisions {
            for id in [a, b] {
                let i = self.index_of(id);
                self.vehicles[i].collided = true;
                if self.config.remove_collided {
                    self.vehicles[i].done = true;
                }
                if let Some(st) = report.vehicles.iter_mut().find(|s| s.id == id) {
                    st.collided = true;
                }
            }
        }
        self.time_step_index = step;
        report.step = step;
        report.spawned = self.admit_pending();
        Ok(report)
    }

    fn index_of(&self, id: VehicleId) -> usize {
        match self.vehicles.get(id.0 as usize) {
            Some(v) if v.id == id => id.0 as usize,
            _ => self.vehicles.iter().position(|v| v.id == id).expect("known vehicle id"),
        }
    }
}

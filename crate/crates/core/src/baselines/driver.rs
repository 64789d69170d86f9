//! Signal-obeying car following. Vehicles stop at the line unless their
//! group is green, and a vehicle may only enter the box after reserving its
//! route against every conflicting route currently in use. The reservation
//! layer is what keeps permissive lefts and yellow-phase stragglers from
//! colliding.

use std::collections::BTreeMap;

use crate::control::Controller;
use crate::error::Result;
use crate::sim::collision::Obb;
use crate::sim::{Intention, IntersectionGeometry, Route, SpeedLimits, StepReport, VehicleDims, VehicleId, VehicleState, WorldState};

use super::signals::{atl_step, fttl_state_at, Phase, SignalPlan, SignalState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverParams {
    pub cruise: f64,
    /// Bumper-to-bumper standstill gap.
    pub min_gap: f64,
    /// Time headway to a leader, s.
    pub headway: f64,
    /// Deceleration assumed when planning a stop; below the vehicle limit on purpose.
    pub plan_decel: f64,
    /// Deceleration credited to a braking leader.
    pub leader_decel: f64,
    /// Front bumper distance kept before the stop line.
    pub stop_margin: f64,
    /// Rear bumper distance past the box exit before a reservation is released.
    pub release_margin: f64,
    /// A left turn waits while oncoming traffic is this close to its line, s.
    pub left_yield_time: f64,
    pub conflict_inflation: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        Self {
            cruise: 15.0,
            min_gap: 2.5,
            headway: 1.0,
            plan_decel: 4.0,
            leader_decel: 4.5,
            stop_margin: 0.5,
            release_margin: 1.0,
            left_yield_time: 4.0,
            conflict_inflation: 0.3,
        }
    }
}

/// Largest speed command after which the vehicle can still stop within
/// `distance` metres, given trapezoidal motion over the next step and then
/// constant braking at `decel`.
pub fn safe_speed(distance: f64, speed: f64, decel: f64, dt: f64) -> f64 {
    let rhs = distance - speed * dt / 2.0;
    if rhs <= 0.0 {
        return 0.0;
    }
    decel * (-dt / 2.0 + (dt * dt / 4.0 + 2.0 * rhs / decel).sqrt())
}

/// A vehicle ahead on the same lane: bumper gap and its speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

/// Speed command for a vehicle under signal control. `dist_to_stopline` is
/// measured from the front bumper and is `None` once the line is behind it.
pub fn car_follow_command(
    speed: f64,
    leaders: &[Leader],
    signal: Phase,
    dist_to_stopline: Option<f64>,
    params: &DriverParams,
    limits: &SpeedLimits,
    dt: f64,
) -> f64 {
    let mut cmd = params.cruise;
    for l in leaders {
        let d = l.gap - params.min_gap + l.speed * l.speed / (2.0 * params.leader_decel) - speed * params.headway;
        cmd = cmd.min(safe_speed(d, speed, params.plan_decel, dt));
    }
    if let Some(dist) = dist_to_stopline {
        let room = dist - params.stop_margin;
        let can_stop = speed * speed / (2.0 * limits.decel) <= room.max(0.0);
        let must_stop = match signal {
            Phase::Red => true,
            Phase::Yellow => can_stop,
            Phase::Green => false,
        };
        if must_stop {
            cmd = if can_stop { cmd.min(safe_speed(room, speed, params.plan_decel, dt)) } else { 0.0 };
        }
    }
    cmd.max(0.0)
}

/// Symmetric 12×12 table of routes (by [`Route::index`]) whose swept boxes overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictMatrix {
    table: [[bool; 12]; 12],
}

impl ConflictMatrix {
    /// Samples each route's footprint from the waiting position to the
    /// release point and marks every pair of routes from different
    /// approaches whose inflated footprints meet. Same-approach pairs are
    /// left to car following.
    pub fn build(geometry: &IntersectionGeometry, dims: VehicleDims, params: &DriverParams) -> Self {
        let sweeps: Vec<Vec<Obb>> = Route::all().map(|r| sweep(geometry, r, dims, params, params.conflict_inflation)).collect();
        let mut table = [[false; 12]; 12];
        for i in 0..12 {
            for j in i + 1..12 {
                if Route::from_index(i).approach == Route::from_index(j).approach {
                    continue;
                }
                let hit = sweeps[i].iter().any(|a| sweeps[j].iter().any(|b| a.overlaps(b)));
                table[i][j] = hit;
                table[j][i] = hit;
            }
        }
        Self { table }
    }

    pub fn conflicts(&self, a: Route, b: Route) -> bool {
        self.table[a.index()][b.index()]
    }
}

fn stop_target(geometry: &IntersectionGeometry, dims: VehicleDims, params: &DriverParams) -> f64 {
    geometry.stop_line_offset() - params.stop_margin - dims.length / 2.0
}

fn release_point(geometry: &IntersectionGeometry, route: Route, dims: VehicleDims, params: &DriverParams) -> f64 {
    geometry.box_exit_offset(route) + params.release_margin + dims.length / 2.0
}

/// Footprints of a reserved vehicle between its waiting position and release.
fn sweep(geometry: &IntersectionGeometry, route: Route, dims: VehicleDims, params: &DriverParams, inflate: f64) -> Vec<Obb> {
    let from = stop_target(geometry, dims, params);
    let to = release_point(geometry, route, dims, params);
    let n = ((to - from) / 0.25).ceil() as usize;
    (0..=n)
        .map(|k| {
            let s = from + (to - from) * k as f64 / n as f64;
            let mut b = Obb::from_pose(geometry.pose(route, s), dims.length, dims.width);
            b.half_length += inflate;
            b.half_width += inflate;
            b
        })
        .collect()
}

/// Signal timing plus car following plus box reservations for every vehicle.
#[derive(Debug, Clone)]
pub struct SignalController {
    plan: SignalPlan,
    state: SignalState,
    params: DriverParams,
    conflicts: ConflictMatrix,
    reservations: BTreeMap<VehicleId, Route>,
}

impl SignalController {
    pub fn new(plan: SignalPlan, geometry: &IntersectionGeometry, dims: VehicleDims) -> Self {
        let params = DriverParams::default();
        Self {
            conflicts: ConflictMatrix::build(geometry, dims, &params),
            plan,
            state: SignalState::initial(),
            params,
            reservations: BTreeMap::new(),
        }
    }

    pub fn plan(&self) -> &SignalPlan {
        &self.plan
    }

    /// Signal shown at world time `t`.
    pub fn signal_at(&self, t: f64) -> SignalState {
        if self.plan.is_actuated() {
            self.state
        } else {
            fttl_state_at(&self.plan, t)
        }
    }

    pub fn reservations(&self) -> impl Iterator<Item = (&VehicleId, &Route)> {
        self.reservations.iter()
    }

    fn leaders(&self, world: &WorldState, v: &VehicleState) -> Vec<Leader> {
        let g = world.geometry();
        let exit_coord = |u: &VehicleState| u.s - g.box_exit_offset(u.route);
        world
            .active_vehicles()
            .filter(|u| u.id != v.id)
            .filter_map(|u| {
                let same_lane = u.route.approach == v.route.approach && u.s > v.s && u.rear() < g.box_exit_offset(u.route);
                let same_exit = u.route.exit_road() == v.route.exit_road() && u.front() > g.box_exit_offset(u.route) && exit_coord(u) > exit_coord(v);
                let centre_gap = if same_lane {
                    u.s - v.s
                } else if same_exit {
                    exit_coord(u) - exit_coord(v)
                } else {
                    return None;
                };
                Some(Leader { gap: centre_gap - (u.length + v.length) / 2.0, speed: u.speed })
            })
            .collect()
    }

    fn oncoming_blocks_left(&self, world: &WorldState, v: &VehicleState, signal: &SignalState) -> bool {
        let g = world.geometry();
        let line = g.stop_line_offset();
        world.active_vehicles().any(|u| {
            u.route.approach == v.route.approach.opposite()
                && u.route.intention != Intention::Left
                && !self.reservations.contains_key(&u.id)
                && signal.phase_for(u.route.approach) == Phase::Green
                && u.front() <= line
                && line - u.front() <= u.speed * self.params.left_yield_time + self.params.stop_margin + 0.5
        })
    }

    fn try_reserve(&mut self, world: &WorldState, v: &VehicleState, signal: &SignalState) -> bool {
        if signal.phase_for(v.route.approach) != Phase::Green {
            return false;
        }
        if self.reservations.iter().any(|(id, r)| *id != v.id && self.conflicts.conflicts(*r, v.route)) {
            return false;
        }
        if v.route.intention == Intention::Left && self.oncoming_blocks_left(world, v, signal) {
            return false;
        }
        self.reservations.insert(v.id, v.route);
        true
    }
}

fn next_speed(speed: f64, command: f64, limits: &SpeedLimits, dt: f64) -> f64 {
    let dv = (command.clamp(0.0, limits.max_speed) - speed).clamp(-limits.decel * dt, limits.accel * dt);
    (speed + dv).clamp(0.0, limits.max_speed)
}

impl Controller for SignalController {
    fn commands(&mut self, world: &WorldState) -> Result<BTreeMap<VehicleId, f64>> {
        let g = world.geometry().clone();
        let cfg = *world.config();
        let dt = cfg.dt;
        let signal = self.signal_at(world.time());
        let params = self.params;
        self.reservations.retain(|id, route| {
            world.vehicle(*id).is_some_and(|v| v.is_active() && v.s < release_point(&g, *route, cfg.vehicle, &params))
        });
        // Vehicles nearest their line decide first so that leaders claim the box before followers.
        let mut order: Vec<&VehicleState> = world.active_vehicles().collect();
        order.sort_by(|a, b| b.s.total_cmp(&a.s).then(a.id.cmp(&b.id)));
        let target = stop_target(&g, cfg.vehicle, &params);
        let mut out = BTreeMap::new();
        for v in order {
            let leaders = self.leaders(world, v);
            let free = car_follow_command(v.speed, &leaders, Phase::Green, None, &params, &cfg.limits, dt);
            // Past the line means the vehicle held a reservation that has since been released.
            let cmd = if self.reservations.contains_key(&v.id) || v.front() > g.stop_line_offset() {
                free
            } else {
                let v1 = next_speed(v.speed, free, &cfg.limits, dt);
                let s1 = v.s + 0.5 * (v.speed + v1) * dt;
                let committed = v1 * v1 / (2.0 * params.plan_decel) > target - s1;
                if !committed || self.try_reserve(world, v, &signal) {
                    free
                } else {
                    let dist = g.stop_line_offset() - v.front();
                    car_follow_command(v.speed, &leaders, Phase::Red, Some(dist.max(0.0)), &params, &cfg.limits, dt)
                }
            };
            out.insert(v.id, cmd);
        }
        Ok(out)
    }

    fn observe(&mut self, world: &WorldState, _report: &StepReport) {
        if !self.plan.is_actuated() {
            return;
        }
        let g = world.geometry();
        let detector = g.stop_line_offset() - self.plan.detector_distance;
        let mut hits = [false; 4];
        for v in world.active_vehicles() {
            if v.rear() <= detector && v.front() >= detector {
                hits[v.route.approach.index()] = true;
            }
        }
        self.state = atl_step(&self.state, &self.plan, hits, world.dt());
    }
}

//! Layout of the 4-way, 1-lane-per-direction intersection.
//!
//! World frame: x points east, y points north, the box is centred on the
//! origin. Traffic keeps to the right. Every route is built once for the
//! vehicle entering from the south and then rotated clockwise in steps of
//! 90°, so the twelve routes are exact rotations of three canonical paths.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    /// Rotation by -90°: `(x, y) -> (y, -x)`. Exact in floating point.
    pub fn rotated_cw(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }

    /// Unit normal pointing to the right of `self` when `self` is a heading.
    pub fn right_normal(self) -> Vec2 {
        self.rotated_cw()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// The road a vehicle enters from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    North,
    East,
    South,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::North, Approach::East, Approach::South, Approach::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Approach {
        Approach::ALL[i % 4]
    }

    /// The approach obtained by rotating the layout 90° clockwise.
    pub fn rotated_cw(self) -> Approach {
        Approach::from_index(self.index() + 1)
    }

    pub fn opposite(self) -> Approach {
        Approach::from_index(self.index() + 2)
    }

    /// Number of clockwise quarter turns mapping the south approach onto `self`.
    fn turns_from_south(self) -> usize {
        (self.index() + 4 - Approach::South.index()) % 4
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Approach::North => "N",
            Approach::East => "E",
            Approach::South => "S",
            Approach::West => "W",
        }
    }

    /// Road the vehicle leaves on after performing `intention`.
    pub fn exit_road(self, intention: Intention) -> Approach {
        match intention {
            Intention::Straight => self.opposite(),
            // From the south, a right turn leaves towards the east.
            Intention::Right => Approach::from_index(self.index() + 3),
            Intention::Left => Approach::from_index(self.index() + 1),
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Approach {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "n" | "north" => Ok(Approach::North),
            "e" | "east" => Ok(Approach::East),
            "s" | "south" => Ok(Approach::South),
            "w" | "west" => Ok(Approach::West),
            other => Err(format!("unknown approach `{other}`")),
        }
    }
}

/// Turning intention, fixed for a vehicle's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intention {
    Left,
    Straight,
    Right,
}

impl Intention {
    pub const ALL: [Intention; 3] = [Intention::Left, Intention::Straight, Intention::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Intention {
        Intention::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Intention::Left => "left",
            Intention::Straight => "straight",
            Intention::Right => "right",
        }
    }
}

impl fmt::Display for Intention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Intention {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l" | "left" => Ok(Intention::Left),
            "s" | "straight" => Ok(Intention::Straight),
            "r" | "right" => Ok(Intention::Right),
            other => Err(format!("unknown intention `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Route {
    pub approach: Approach,
    pub intention: Intention,
}

impl Route {
    pub const fn new(approach: Approach, intention: Intention) -> Self {
        Self { approach, intention }
    }

    pub fn index(self) -> usize {
        self.approach.index() * 3 + self.intention.index()
    }

    pub fn from_index(i: usize) -> Route {
        Route::new(Approach::from_index(i / 3), Intention::from_index(i % 3))
    }

    pub fn all() -> impl Iterator<Item = Route> {
        (0..12).map(Route::from_index)
    }

    pub fn rotated_cw(self) -> Route {
        Route::new(self.approach.rotated_cw(), self.intention)
    }

    pub fn exit_road(self) -> Approach {
        self.approach.exit_road(self.intention)
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.approach, self.intention)
    }
}

/// Position and unit heading on a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec2,
    pub heading: Vec2,
}

impl Pose {
    pub fn rotated_cw(self) -> Pose {
        Pose { position: self.position.rotated_cw(), heading: self.heading.rotated_cw() }
    }
}

/// Polyline with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Path {
    pub fn from_points(points: Vec<Vec2>) -> Path {
        assert!(points.len() >= 2, "a path needs at least two points");
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += (w[1] - w[0]).norm();
            cumulative.push(acc);
        }
        Path { points, cumulative }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        let last = self.points.len() - 2;
        // First index whose cumulative length exceeds s, minus one.
        let idx = self.cumulative.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(last)
    }

    /// Pose at arc length `s`, clamped to `[0, length]`.
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let seg = b - a;
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / len;
        Pose { position: a + seg * t, heading: seg * (1.0 / len) }
    }

    pub fn start_heading(&self) -> Vec2 {
        self.pose_at(0.0).heading
    }

    pub fn end_heading(&self) -> Vec2 {
        let n = self.points.len();
        let seg = self.points[n - 1] - self.points[n - 2];
        seg * (1.0 / seg.norm())
    }

    pub fn rotated_cw(&self) -> Path {
        Path {
            points: self.points.iter().map(|p| p.rotated_cw()).collect(),
            cumulative: self.cumulative.clone(),
        }
    }

    /// Polyline vertices and segments covering arc lengths `[from, to]`.
    pub fn sub_points(&self, from: f64, to: f64) -> Vec<Vec2> {
        let from = from.clamp(0.0, self.length());
        let to = to.clamp(from, self.length());
        let mut out = vec![self.pose_at(from).position];
        for (p, &c) in self.points.iter().zip(&self.cumulative) {
            if c > from && c < to {
                out.push(*p);
            }
        }
        out.push(self.pose_at(to).position);
        out
    }
}

/// Intersection dimensions. All lengths in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    /// Spawn point to stop line.
    pub approach_length: f64,
    /// Box edge to the end of the outgoing lane.
    pub exit_length: f64,
    pub lane_width: f64,
    /// Side of the square intersection box.
    pub box_size: f64,
    /// Chord length used to sample turning arcs.
    pub arc_step: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self { approach_length: 100.0, exit_length: 50.0, lane_width: 3.5, box_size: 14.0, arc_step: 0.25 }
    }
}

/// The twelve route paths plus the layout they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionGeometry {
    params: LayoutParams,
    paths: Vec<Path>,
    box_exit: [f64; 3],
}

impl IntersectionGeometry {
    pub fn new(params: LayoutParams) -> Self {
        let mut box_exit = [0.0; 3];
        let canonical: Vec<Path> = Intention::ALL
            .iter()
            .map(|&i| {
                let (path, exit_s) = canonical_south_path(&params, i);
                box_exit[i.index()] = exit_s;
                path
            })
            .collect();
        let mut paths = Vec::with_capacity(12);
        for approach in Approach::ALL {
            for intention in Intention::ALL {
                let mut p = canonical[intention.index()].clone();
                for _ in 0..approach.turns_from_south() {
                    p = p.rotated_cw();
                }
                paths.push(p);
            }
        }
        Self { params, paths, box_exit }
    }

    pub fn params(&self) -> &LayoutParams {
        &self.params
    }

    pub fn approach_length(&self) -> f64 {
        self.params.approach_length
    }

    pub fn lane_width(&self) -> f64 {
        self.params.lane_width
    }

    /// Arc length of the stop line, identical on every route.
    pub fn stop_line_offset(&self) -> f64 {
        self.params.approach_length
    }

    pub fn box_half(&self) -> f64 {
        self.params.box_size / 2.0
    }

    pub fn route_path(&self, route: Route) -> &Path {
        &self.paths[route.index()]
    }

    pub fn path(&self, approach: Approach, intention: Intention) -> &Path {
        self.route_path(Route::new(approach, intention))
    }

    /// Arc length at which `route` leaves the intersection box.
    pub fn box_exit_offset(&self, route: Route) -> f64 {
        self.box_exit[route.intention.index()]
    }

    pub fn pose(&self, route: Route, s: f64) -> Pose {
        self.route_path(route).pose_at(s)
    }

    /// Whether a point lies on the paved surface (lanes or box).
    pub fn is_drivable(&self, p: Vec2) -> bool {
        let ax = p.x.abs();
        let ay = p.y.abs();
        let half = self.box_half();
        let road_half = self.params.lane_width;
        let reach = half + self.params.approach_length.max(self.params.exit_length);
        let in_box = ax <= half && ay <= half;
        let arm = |lateral: f64, along: f64| lateral <= road_half && along >= half && along <= reach;
        in_box || arm(ax, ay) || arm(ay, ax)
    }
}

impl Default for IntersectionGeometry {
    fn default() -> Self {
        IntersectionGeometry::new(LayoutParams::default())
    }
}

fn canonical_south_path(p: &LayoutParams, intention: Intention) -> (Path, f64) {
    let half = p.box_size / 2.0;
    let off = p.lane_width / 2.0;
    let start = Vec2::new(off, -half - p.approach_length);
    let stop = Vec2::new(off, -half);
    let mut pts = vec![start, stop];
    let exit_point = match intention {
        Intention::Straight => {
            let exit = Vec2::new(off, half);
            pts.push(exit);
            pts.push(Vec2::new(off, half + p.exit_length));
            exit
        }
        Intention::Right => {
            // Arc centred on the near-right corner, tangent to both lanes.
            let center = Vec2::new(half, -half);
            let radius = half - off;
            push_arc(&mut pts, center, radius, std::f64::consts::PI, std::f64::consts::FRAC_PI_2, p.arc_step);
            let exit = Vec2::new(half, -off);
            pts.push(Vec2::new(half + p.exit_length, -off));
            exit
        }
        Intention::Left => {
            let center = Vec2::new(-half, -half);
            let radius = half + off;
            push_arc(&mut pts, center, radius, 0.0, std::f64::consts::FRAC_PI_2, p.arc_step);
            let exit = Vec2::new(-half, off);
            pts.push(Vec2::new(-half - p.exit_length, off));
            exit
        }
    };
    let path = Path::from_points(pts);
    let exit_s = path
        .points()
        .iter()
        .zip(path.cumulative())
        .find(|(q, _)| (**q - exit_point).norm() < 1e-9)
        .map(|(_, &c)| c)
        .expect("box exit vertex present");
    (path, exit_s)
}

/// Appends arc samples after the current last point (which must be the arc start),
/// snapping the final sample to the exact tangent point.
fn push_arc(pts: &mut Vec<Vec2>, center: Vec2, radius: f64, from: f64, to: f64, step: f64) {
    let sweep = to - from;
    let n = ((sweep.abs() * radius) / step).ceil().max(1.0) as usize;
    for k in 1..=n {
        let phi = from + sweep * (k as f64 / n as f64);
        let mut q = center + Vec2::new(phi.cos(), phi.sin()) * radius;
        if k == n {
            // cos/sin of pi/2 are not exact; snap to the analytic tangent point.
            q = if (to - std::f64::consts::FRAC_PI_2).abs() < 1e-12 {
                Vec2::new(center.x, center.y + radius)
            } else {
                q
            };
        }
        pts.push(q);
    }
}

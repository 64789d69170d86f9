//! Egocentric bird's-eye frames and frame stacks.
//!
//! A frame is centred on the ego vehicle and rotated so its heading points
//! up (towards row 0). Channels:
//!
//! 0. drivable surface
//! 1. other active vehicles
//! 2. the ego vehicle's remaining route
//!
//! A pixel is set when its centre lies inside the rendered shape, so all
//! values are exactly 0 or 1. Every world-space quantity is derived from
//! path vertices with sign flips and swaps only, which makes frames of
//! rotated worlds bit-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::sim::{Vec2, VehicleId, WorldState};

pub const CHANNELS: usize = 3;
pub const CHANNEL_DRIVABLE: usize = 0;
pub const CHANNEL_OTHERS: usize = 1;
pub const CHANNEL_ROUTE: usize = 2;

const FRAME_MAGIC: &[u8; 4] = b"FRM1";

#[derive(Debug, Error)]
pub enum ObservationError {
    #[error("vehicle {0} is not active in the world")]
    EgoNotFound(VehicleId),
    #[error("frame shape {found:?} does not match stack shape {expected:?}")]
    ShapeMismatch { expected: (usize, usize, usize), found: (usize, usize, usize) },
    #[error("bad frame file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    /// Square frame side in pixels.
    pub resolution: usize,
    /// Side of the square window in metres.
    pub view_extent: f64,
}

impl RenderParams {
    pub fn new(resolution: usize) -> Self {
        Self { resolution, view_extent: 50.0 }
    }

    pub fn parity() -> Self {
        Self::new(48)
    }

    pub fn meters_per_pixel(&self) -> f64 {
        self.view_extent / self.resolution as f64
    }
}

impl Default for RenderParams {
    fn default() -> Self {
        Self::parity()
    }
}

/// Dense `channels × height × width` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Self { channels, height, width, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[(c * self.height + r) * self.width + col]
    }

    fn set(&mut self, c: usize, r: usize, col: usize, v: f32) {
        self.data[(c * self.height + r) * self.width + col] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Raw dump: magic `FRM1`, then channels, height, width as little-endian
    /// u32, then row-major little-endian f32 values.
    pub fn write_raw<W: Write>(&self, mut out: W) -> Result<(), ObservationError> {
        out.write_all(FRAME_MAGIC)?;
        for d in [self.channels, self.height, self.width] {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw<R: Read>(mut input: R) -> Result<Frame, ObservationError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != FRAME_MAGIC {
            return Err(ObservationError::Format("wrong magic".into()));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut bytes = vec![0u8; n * 4];
        input.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Frame::from_data(dims[0], dims[1], dims[2], data))
    }
}

/// Ego-centred pixel grid: pixel centres mapped to world coordinates.
struct EgoGrid {
    origin: Vec2,
    forward: Vec2,
    right: Vec2,
    resolution: usize,
    mpp: f64,
}

impl EgoGrid {
    fn new(origin: Vec2, forward: Vec2, params: &RenderParams) -> Self {
        Self { origin, forward, right: forward.right_normal(), resolution: params.resolution, mpp: params.meters_per_pixel() }
    }

    /// Offsets (right, forward) in metres of the centre of pixel `(row, col)`.
    fn local(&self, row: usize, col: usize) -> (f64, f64) {
        let half = self.resolution as f64 / 2.0;
        let u = (col as f64 + 0.5 - half) * self.mpp;
        let v = (half - row as f64 - 0.5) * self.mpp;
        (u, v)
    }

    fn world(&self, row: usize, col: usize) -> Vec2 {
        let (u, v) = self.local(row, col);
        let p = self.forward * v + self.right * u;
        self.origin + p
    }

    /// Radius of the circle enclosing the whole window, in metres.
    fn reach(&self) -> f64 {
        self.resolution as f64 * self.mpp * std::f64::consts::FRAC_1_SQRT_2 + self.mpp
    }
}

/// Renders the egocentric frame of vehicle `ego`.
pub fn render_frame(world: &WorldState, ego: VehicleId, params: &RenderParams) -> Result<Frame, ObservationError> {
    let ego_v = world.vehicle(ego).filter(|v| v.is_active()).ok_or(ObservationError::EgoNotFound(ego))?;
    let geometry = world.geometry();
    let pose = world.pose_of(ego_v);
    let grid = EgoGrid::new(pose.position, pose.heading, params);
    let n = params.resolution;
    let mut frame = Frame::zeros(CHANNELS, n, n);

    let reach = grid.reach();
    let others: Vec<_> = world
        .active_vehicles()
        .filter(|v| v.id != ego)
        .map(|v| world.obb_of(v))
        .filter(|b| (b.center - pose.position).norm() <= reach + b.bounding_radius())
        .collect();

    let path = geometry.route_path(ego_v.route);
    let route_pts = path.sub_points(ego_v.s, path.length());
    let half_lane = geometry.lane_width() / 2.0;
    let segments: Vec<(Vec2, Vec2)> = route_pts
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|(a, b)| segment_distance(pose.position, *a, *b) <= reach + half_lane)
        .collect();

    for row in 0..n {
        for col in 0..n {
            let p = grid.world(row, col);
            if geometry.is_drivable(p) {
                frame.set(CHANNEL_DRIVABLE, row, col, 1.0);
            }
            if others.iter().any(|b| b.contains(p)) {
                frame.set(CHANNEL_OTHERS, row, col, 1.0);
            }
            if segments.iter().any(|(a, b)| segment_distance(p, *a, *b) <= half_lane) {
                frame.set(CHANNEL_ROUTE, row, col, 1.0);
            }
        }
    }
    Ok(frame)
}

fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// The last `n` frames of one vehicle, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    frames: Vec<Frame>,
}

impl FrameStack {
    /// A stack holding `n` copies of `first`.
    pub fn reset(first: Frame, n: usize) -> Self {
        assert!(n > 0, "frame stack needs at least one frame");
        Self { frames: vec![first; n] }
    }

    pub fn from_frames(frames: Vec<Frame>) -> Self {
        assert!(!frames.is_empty());
        let shape = frames[0].shape();
        assert!(frames.iter().all(|f| f.shape() == shape));
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }

    /// Shape of the stacked tensor: `(n · channels, height, width)`.
    pub fn tensor_shape(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.frame_shape();
        (c * self.frames.len(), h, w)
    }

    /// Drops the oldest frame and appends `f`.
    pub fn push(&mut self, f: Frame) -> Result<(), ObservationError> {
        if f.shape() != self.frame_shape() {
            return Err(ObservationError::ShapeMismatch { expected: self.frame_shape(), found: f.shape() });
        }
        self.frames.remove(0);
        self.frames.push(f);
        Ok(())
    }

    /// Channel-concatenated values, oldest frame first.
    pub fn to_vec(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.frames.len() * self.frames[0].data.len());
        self.write_into(&mut out);
        out
    }

    pub fn write_into(&self, out: &mut Vec<f32>) {
        for f in &self.frames {
            out.extend_from_slice(&f.data);
        }
    }
}

/// Frame stacks of every active vehicle, refreshed once per world step.
#[derive(Debug, Clone)]
pub struct StackTracker {
    params: RenderParams,
    depth: usize,
    stacks: BTreeMap<VehicleId, FrameStack>,
}

impl StackTracker {
    pub fn new(params: RenderParams, depth: usize) -> Self {
        Self { params, depth, stacks: BTreeMap::new() }
    }

    pub fn params(&self) -> &RenderParams {
        &self.params
    }

    /// Renders a new frame for every active vehicle. Newcomers start from a
    /// reset stack; vehicles that left the world are dropped.
    pub fn update(&mut self, world: &WorldState) -> Result<(), ObservationError> {
        self.stacks.retain(|id, _| world.vehicle(*id).is_some_and(|v| v.is_active()));
        for v in world.active_vehicles() {
            let frame = render_frame(world, v.id, &self.params)?;
            match self.stacks.get_mut(&v.id) {
                Some(stack) => stack.push(frame)?,
                None => {
                    self.stacks.insert(v.id, FrameStack::reset(frame, self.depth));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: VehicleId) -> Option<&FrameStack> {
        self.stacks.get(&id)
    }

    pub fn clear(&mut self) {
        self.stacks.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Approach, Intention, IntersectionGeometry, Route, WorldConfig};
    use std::sync::Arc;

    fn world() -> WorldState {
        WorldState::empty(Arc::new(IntersectionGeometry::default()), WorldConfig::default())
    }

    fn frame(v: f32) -> Frame {
        Frame::from_data(3, 2, 2, vec![v; 12])
    }

    #[test]
    fn lone_ego_frames_are_road_invariant() {
        for res in [16, 24, 48] {
            let params = RenderParams::new(res);
            let mut a = world();
            let ia = a.insert_vehicle(Route::new(Approach::North, Intention::Straight), 80.0, 5.0);
            let mut b = world();
            let ib = b.insert_vehicle(Route::new(Approach::East, Intention::Straight), 80.0, 5.0);
            let fa = render_frame(&a, ia, &params).unwrap();
            let fb = render_frame(&b, ib, &params).unwrap();
            assert_eq!(fa, fb);
            assert!(fa.channel(CHANNEL_OTHERS).iter().all(|&x| x == 0.0));
            assert!(fa.channel(CHANNEL_DRIVABLE).contains(&1.0));
            assert!(fa.channel(CHANNEL_ROUTE).contains(&1.0));
        }
    }

    #[test]
    fn values_are_binary() {
        let mut w = world();
        let id = w.insert_vehicle(Route::new(Approach::West, Intention::Left), 104.0, 5.0);
        w.insert_vehicle(Route::new(Approach::North, Intention::Straight), 101.0, 5.0);
        let f = render_frame(&w, id, &RenderParams::parity()).unwrap();
        assert_eq!(f.shape(), (3, 48, 48));
        assert!(f.data().iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn missing_ego_is_an_error() {
        let w = world();
        assert!(matches!(render_frame(&w, VehicleId(9), &RenderParams::parity()), Err(ObservationError::EgoNotFound(_))));
    }

    #[test]
    fn stack_reset_and_push() {
        let mut st = FrameStack::reset(frame(0.0), 3);
        st.push(frame(1.0)).unwrap();
        assert_eq!(st.frames(), &[frame(0.0), frame(0.0), frame(1.0)]);
        st.push(frame(0.25)).unwrap();
        st.push(frame(0.5)).unwrap();
        assert_eq!(st.frames(), &[frame(1.0), frame(0.25), frame(0.5)]);
        assert_eq!(st.len(), 3);
        assert_eq!(st.tensor_shape(), (9, 2, 2));
    }

    #[test]
    fn push_with_wrong_shape_fails() {
        let mut st = FrameStack::reset(frame(0.0), 3);
        let err = st.push(Frame::zeros(3, 4, 4)).unwrap_err();
        assert!(matches!(err, ObservationError::ShapeMismatch { .. }));
        assert_eq!(st.len(), 3);
    }

    #[test]
    fn raw_dump_round_trip() {
        let mut w = world();
        let id = w.insert_vehicle(Route::new(Approach::South, Intention::Right), 95.0, 5.0);
        let f = render_frame(&w, id, &RenderParams::new(16)).unwrap();
        let mut buf = Vec::new();
        f.write_raw(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 3 * 16 * 16 * 4);
        assert_eq!(Frame::read_raw(&buf[..]).unwrap(), f);
        buf[0] = b'X';
        assert!(Frame::read_raw(&buf[..]).is_err());
    }
}

//! Separating-axis overlap test for oriented rectangles.

use super::geometry::{Pose, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    /// Unit vector along the length.
    pub axis: Vec2,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn from_pose(pose: Pose, length: f64, width: f64) -> Self {
        Self { center: pose.position, axis: pose.heading, half_length: length / 2.0, half_width: width / 2.0 }
    }

    pub fn normal(&self) -> Vec2 {
        self.axis.right_normal()
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let a = self.axis * self.half_length;
        let n = self.normal() * self.half_width;
        [self.center + a + n, self.center + a - n, self.center - a - n, self.center - a + n]
    }

    pub fn bounding_radius(&self) -> f64 {
        (self.half_length * self.half_length + self.half_width * self.half_width).sqrt()
    }

    /// Point containment, boundary inclusive.
    pub fn contains(&self, p: Vec2) -> bool {
        let d = p - self.center;
        d.dot(self.axis).abs() <= self.half_length && d.dot(self.normal()).abs() <= self.half_width
    }

    /// Half-extent of the rectangle projected on unit axis `u`.
    fn projected_radius(&self, u: Vec2) -> f64 {
        self.half_length * self.axis.dot(u).abs() + self.half_width * self.normal().dot(u).abs()
    }

    /// Strict overlap: rectangles that only touch along an edge do not collide.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let d = other.center - self.center;
        let reach = self.bounding_radius() + other.bounding_radius();
        if d.dot(d) >= reach * reach {
            return false;
        }
        for u in [self.axis, self.normal(), other.axis, other.normal()] {
            let dist = d.dot(u).abs();
            if dist >= self.projected_radius(u) + other.projected_radius(u) {
                return false;
            }
        }
        true
    }
}

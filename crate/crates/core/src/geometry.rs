//! Planar geometry shared by every module: vectors, unit headings, rigid
//! frame poses and oriented boxes.
//!
//! Frame convention: X forward, Y left, Z up; yaw is counterclockwise from +X.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2 { x: v[0], y: v[1] }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
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
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Yaw stored as its (sin, cos) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heading {
    pub sin: f64,
    pub cos: f64,
}

impl Default for Heading {
    fn default() -> Self {
        Heading::FORWARD
    }
}

impl Heading {
    /// ψ = 0, i.e. pointing along +X.
    pub const FORWARD: Heading = Heading { sin: 0.0, cos: 1.0 };

    pub fn from_angle(psi: f64) -> Self {
        let (sin, cos) = psi.sin_cos();
        Heading { sin, cos }
    }

    pub fn angle(self) -> f64 {
        self.sin.atan2(self.cos)
    }

    /// Unit direction vector (cosψ, sinψ).
    pub fn direction(self) -> Vec2 {
        Vec2::new(self.cos, self.sin)
    }

    pub fn rotate(self, angle: f64) -> Heading {
        let (s, c) = angle.sin_cos();
        Heading {
            sin: self.sin * c + self.cos * s,
            cos: self.cos * c - self.sin * s,
        }
    }

    pub fn norm(self) -> f64 {
        self.sin.hypot(self.cos)
    }
}

/// Rescale a raw (sin, cos) pair onto the unit circle.
pub fn normalize_heading(sin_raw: f64, cos_raw: f64) -> Result<Heading> {
    let norm = sin_raw.hypot(cos_raw);
    if !(norm >= 1e-12) {
        return Err(Error::DegenerateHeading { norm });
    }
    Ok(Heading {
        sin: sin_raw / norm,
        cos: cos_raw / norm,
    })
}

/// Pose of a child frame expressed in a parent frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        yaw: 0.0,
    };

    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 { x, y, yaw }
    }

    pub fn translation(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Parent-frame point → child-frame coordinates.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.translation()).rotate(-self.yaw)
    }

    /// Child-frame point → parent-frame coordinates.
    pub fn to_parent(&self, p: Vec2) -> Vec2 {
        p.rotate(self.yaw) + self.translation()
    }

    pub fn vector_to_local(&self, v: Vec2) -> Vec2 {
        v.rotate(-self.yaw)
    }

    pub fn vector_to_parent(&self, v: Vec2) -> Vec2 {
        v.rotate(self.yaw)
    }

    /// `self` is frame B in A, `child` is frame C in B; returns C in A.
    pub fn compose(&self, child: &Pose2) -> Pose2 {
        let t = self.to_parent(child.translation());
        Pose2::new(t.x, t.y, self.yaw + child.yaw)
    }

    pub fn inverse(&self) -> Pose2 {
        let t = (-self.translation()).rotate(-self.yaw);
        Pose2::new(t.x, t.y, -self.yaw)
    }
}

/// Planar oriented box. `half_extents.x` runs along the heading (half
/// length), `half_extents.y` across it (half width).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox2D {
    pub center: Vec2,
    pub half_extents: Vec2,
    pub heading: Heading,
}

impl OrientedBox2D {
    pub fn new(center: Vec2, length: f64, width: f64, heading: Heading) -> Self {
        OrientedBox2D {
            center,
            half_extents: Vec2::new(length / 2.0, width / 2.0),
            heading,
        }
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let u = self.heading.direction();
        [u, u.perp()]
    }

    /// Corners in counterclockwise order starting at front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let a = u * self.half_extents.x;
        let b = v * self.half_extents.y;
        let c = self.center;
        [c + a + b, c - a + b, c - a - b, c + a - b]
    }

    pub fn translated(&self, by: Vec2) -> Self {
        OrientedBox2D {
            center: self.center + by,
            ..*self
        }
    }

    fn radius_along(&self, axis: Vec2) -> f64 {
        let [u, v] = self.axes();
        self.half_extents.x * u.dot(axis).abs() + self.half_extents.y * v.dot(axis).abs()
    }
}

/// Signed separation between two boxes and the unit direction pointing from
/// `b` toward `a`.
///
/// Disjoint boxes report their Euclidean gap (≥ 0) and the direction between
/// the closest points. Overlapping boxes report minus the minimum translation
/// depth, with the direction in which `a` must move to separate.
pub fn min_distance_vector(a: &OrientedBox2D, b: &OrientedBox2D) -> (f64, Vec2) {
    let delta = a.center - b.center;
    let mut best_overlap = f64::INFINITY;
    let mut best_axis = Vec2::new(1.0, 0.0);
    for axis in a.axes().into_iter().chain(b.axes()) {
        let d = delta.dot(axis);
        let overlap = a.radius_along(axis) + b.radius_along(axis) - d.abs();
        if overlap < best_overlap {
            best_overlap = overlap;
            best_axis = if d < 0.0 { -axis } else { axis };
        }
    }

    if best_overlap > 0.0 {
        return (-best_overlap, best_axis);
    }

    let (dist, pa, pb) = polygon_gap(&a.corners(), &b.corners());
    if dist < 1e-12 {
        return (0.0, best_axis);
    }
    (dist, (pa - pb) * (1.0 / dist))
}

fn closest_on_segment(p: Vec2, s0: Vec2, s1: Vec2) -> Vec2 {
    let d = s1 - s0;
    let len_sq = d.norm_sq();
    if len_sq == 0.0 {
        return s0;
    }
    let t = ((p - s0).dot(d) / len_sq).clamp(0.0, 1.0);
    s0 + d * t
}

/// Gap between two disjoint convex polygons as (distance, point on a, point on b).
fn polygon_gap(a: &[Vec2; 4], b: &[Vec2; 4]) -> (f64, Vec2, Vec2) {
    let mut best = (f64::INFINITY, Vec2::ZERO, Vec2::ZERO);
    for i in 0..4 {
        let (a0, a1) = (a[i], a[(i + 1) % 4]);
        for j in 0..4 {
            let (b0, b1) = (b[j], b[(j + 1) % 4]);
            for (p, on_a) in [(a0, true), (a1, true), (b0, false), (b1, false)] {
                let (pa, pb) = if on_a {
                    (p, closest_on_segment(p, b0, b1))
                } else {
                    (closest_on_segment(p, a0, a1), p)
                };
                let d = (pa - pb).norm();
                if d < best.0 {
                    best = (d, pa, pb);
                }
            }
        }
    }
    best
}

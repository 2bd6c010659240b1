//! Link-versus-obstacle checks. Links are capsules around the skeleton
//! segments; obstacles are axis-aligned boxes and finite solid cylinders,
//! all expressed in the arm base frame.

use serde::{Deserialize, Serialize};

use super::kinematics::chain_frames;
use super::model::{ArmModel, JointVector};
use crate::geometry::{Transform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub min: Vec3,
    pub max: Vec3,
}

impl Cuboid {
    pub fn distance_to_point(&self, p: &Vec3) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        let dz = (self.min.z - p.z).max(0.0).max(p.z - self.max.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    /// Centre of the bottom cap.
    pub base: Vec3,
    /// Unit axis direction.
    pub axis: Vec3,
    pub radius: f64,
    pub height: f64,
}

impl Cylinder {
    pub fn vertical(base: Vec3, radius: f64, height: f64) -> Self {
        Self {
            base,
            axis: Vec3::z(),
            radius,
            height,
        }
    }

    /// Distance from `p` to the solid cylinder (0 inside).
    pub fn distance_to_point(&self, p: &Vec3) -> f64 {
        let d = p - self.base;
        let h = d.dot(&self.axis);
        let radial = (d - self.axis * h).norm();
        let over = if h < 0.0 {
            -h
        } else if h > self.height {
            h - self.height
        } else {
            0.0
        };
        let out = (radial - self.radius).max(0.0);
        (out * out + over * over).sqrt()
    }

    pub fn transformed(&self, t: &Transform) -> Cylinder {
        Cylinder {
            base: t.apply(&self.base),
            axis: t.apply_vector(&self.axis),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSet {
    #[serde(default)]
    pub cuboids: Vec<Cuboid>,
    #[serde(default)]
    pub cylinders: Vec<Cylinder>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkId {
    Base,
    Link2,
    Link3,
    Wrist,
    Gripper,
}

const LINKS: [LinkId; 5] = [
    LinkId::Base,
    LinkId::Link2,
    LinkId::Link3,
    LinkId::Wrist,
    LinkId::Gripper,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ObstacleId {
    Cuboid(usize),
    Cylinder(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CollisionResult {
    Clear,
    Colliding {
        link: LinkId,
        obstacle: ObstacleId,
        distance: f64,
    },
}

impl CollisionResult {
    pub fn is_clear(&self) -> bool {
        matches!(self, CollisionResult::Clear)
    }
}

/// Minimum of `f` over `[0, 1]` for a convex `f`. Distance from a moving
/// point on a segment to a convex set is convex in the segment parameter.
fn minimize_convex(f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    f(0.0).min(f(1.0)).min(fc).min(fd)
}

pub fn segment_cuboid_distance(a: &Vec3, b: &Vec3, cuboid: &Cuboid) -> f64 {
    minimize_convex(|t| cuboid.distance_to_point(&(a + (b - a) * t)))
}

pub fn segment_cylinder_distance(a: &Vec3, b: &Vec3, cyl: &Cylinder) -> f64 {
    minimize_convex(|t| cyl.distance_to_point(&(a + (b - a) * t)))
}

/// Tests every link capsule against every obstacle and reports the first
/// contact in link order.
pub fn check_collision(
    model: &ArmModel,
    q: &JointVector,
    obstacles: &ObstacleSet,
) -> CollisionResult {
    let pts = chain_frames(model, q).skeleton();
    // skeleton: base, shoulder, elbow, wrist(J4), J5, tip
    let segments = [
        (pts[0], pts[1]),
        (pts[1], pts[2]),
        (pts[2], pts[3]),
        (pts[3], pts[4]),
        (pts[4], pts[5]),
    ];
    for (link, (a, b)) in LINKS.iter().zip(segments.iter()) {
        if *link == LinkId::Wrist && (a - b).norm() < 1e-12 {
            continue;
        }
        for (i, c) in obstacles.cuboids.iter().enumerate() {
            let d = segment_cuboid_distance(a, b, c);
            if d < model.link_radius {
                return CollisionResult::Colliding {
                    link: *link,
                    obstacle: ObstacleId::Cuboid(i),
                    distance: d,
                };
            }
        }
        for (i, c) in obstacles.cylinders.iter().enumerate() {
            let d = segment_cylinder_distance(a, b, c);
            if d < model.link_radius {
                return CollisionResult::Colliding {
                    link: *link,
                    obstacle: ObstacleId::Cylinder(i),
                    distance: d,
                };
            }
        }
    }
    CollisionResult::Clear
}

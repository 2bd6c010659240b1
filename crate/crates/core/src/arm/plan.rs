//! Three-waypoint trim maneuvers: pre-grasp standoff, grasp, retreat.
//! Approaches are tried straight from the shoulder first, then tilted down,
//! then swung to either side.

use serde::{Deserialize, Serialize};

use super::collision::{check_collision, CollisionResult, ObstacleSet};
use super::kinematics::{inverse_kinematics, IkOptions, IkTarget};
use super::model::{ArmModel, JointVector};
use super::ArmError;
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproachKind {
    Direct,
    SideLeft,
    SideRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperAction {
    Open,
    Close,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaypointLabel {
    PreGrasp,
    Grasp,
    Retreat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimWaypoint {
    pub label: WaypointLabel,
    pub q: JointVector,
    pub gripper: GripperAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimPlan {
    pub approach: ApproachKind,
    /// Unit approach direction in the arm base frame.
    pub direction: Vec3,
    pub waypoints: Vec<TrimWaypoint>,
}

impl TrimPlan {
    pub fn grasp(&self) -> &TrimWaypoint {
        &self.waypoints[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimOptions {
    /// Pre-grasp distance back along the approach direction (m).
    pub standoff: f64,
    /// Retreat distance back along the approach direction (m).
    pub retreat: f64,
    /// Horizontal swing of the lateral approaches away from direct (rad).
    pub side_angle: f64,
    /// Initial J4 roll for the lateral approaches (rad).
    pub side_roll: f64,
    /// Downward tilts tried after the straight line from the shoulder (rad).
    pub pitches: [f64; 3],
    pub approach_weight: f64,
    pub ik: IkOptions,
}

impl Default for TrimOptions {
    fn default() -> Self {
        Self {
            standoff: 0.05,
            retreat: 0.06,
            side_angle: 0.9,
            side_roll: 0.8,
            pitches: [0.5, 1.0, 1.45],
            approach_weight: 0.15,
            ik: IkOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachFailure {
    pub approach: ApproachKind,
    pub reason: String,
}

fn rotate_z(v: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Plans a collision-free trim of `target` (arm base frame). Tries the direct
/// approach first, then lateral approaches with the wrist rolled to either
/// side.
pub fn plan_trim(
    model: &ArmModel,
    target: &Vec3,
    obstacles: &ObstacleSet,
    seed: &JointVector,
    opts: &TrimOptions,
) -> Result<TrimPlan, ArmError> {
    let distance = (target - model.shoulder()).norm();
    if distance > model.gripper_reach_total {
        return Err(ArmError::Unreachable {
            distance,
            reach: model.gripper_reach_total,
        });
    }
    let to_target = target - model.shoulder();
    let direct = if to_target.norm() < 1e-9 {
        Vec3::x()
    } else {
        to_target.normalize()
    };
    let horizontal = {
        let h = Vec3::new(to_target.x, to_target.y, 0.0);
        if h.norm() < 1e-9 {
            Vec3::x()
        } else {
            h.normalize()
        }
    };

    let mut failures = Vec::new();
    let mut candidates = Vec::new();
    for (kind, yaw, approach_seed) in [
        (ApproachKind::Direct, 0.0, *seed),
        (
            ApproachKind::SideLeft,
            -opts.side_angle,
            side_seed(seed, opts.side_roll),
        ),
        (
            ApproachKind::SideRight,
            opts.side_angle,
            side_seed(seed, -opts.side_roll),
        ),
    ] {
        candidates.push((kind, rotate_z(&direct, yaw), approach_seed));
        let h = rotate_z(&horizontal, yaw);
        for pitch in opts.pitches {
            let (s, c) = pitch.sin_cos();
            candidates.push((kind, Vec3::new(h.x * c, h.y * c, -s), approach_seed));
        }
    }
    for (kind, dir, approach_seed) in candidates {
        match try_approach(model, target, &dir, obstacles, &approach_seed, opts) {
            Ok(waypoints) => {
                return Ok(TrimPlan {
                    approach: kind,
                    direction: dir,
                    waypoints,
                })
            }
            Err(reason) => failures.push(ApproachFailure {
                approach: kind,
                reason,
            }),
        }
    }
    Err(ArmError::NoPlan(failures))
}

fn side_seed(seed: &JointVector, roll: f64) -> JointVector {
    let mut s = *seed;
    s.0[3] = roll;
    s
}

fn try_approach(
    model: &ArmModel,
    target: &Vec3,
    dir: &Vec3,
    obstacles: &ObstacleSet,
    seed: &JointVector,
    opts: &TrimOptions,
) -> Result<Vec<TrimWaypoint>, String> {
    let points = [
        (
            WaypointLabel::PreGrasp,
            target - dir * opts.standoff,
            GripperAction::Open,
        ),
        (WaypointLabel::Grasp, *target, GripperAction::Close),
        (
            WaypointLabel::Retreat,
            target - dir * opts.retreat,
            GripperAction::Hold,
        ),
    ];
    let mut prev = *seed;
    let mut out = Vec::with_capacity(3);
    for (label, p, gripper) in points {
        let ik_target = IkTarget::with_approach(p, *dir, opts.approach_weight);
        let sol = inverse_kinematics(model, &ik_target, &prev, &opts.ik)
            .map_err(|e| format!("{label:?}: {e}"))?;
        model
            .check_limits(&sol.q)
            .map_err(|e| format!("{label:?}: {e}"))?;
        if let CollisionResult::Colliding { link, obstacle, .. } =
            check_collision(model, &sol.q, obstacles)
        {
            return Err(format!("{label:?}: {link:?} collides with {obstacle:?}"));
        }
        prev = sol.q;
        out.push(TrimWaypoint {
            label,
            q: sol.q,
            gripper,
        });
    }
    Ok(out)
}

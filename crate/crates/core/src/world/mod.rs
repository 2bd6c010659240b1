//! Arena and robot state plus the fixed-step kinematic integrator. The world
//! is the only place ground truth lives; everything else observes it through
//! sensors or the bridge.

mod scenario;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use scenario::{
    default_arena, default_scenario, generate_plant_spec, minimal_scenario, part_color,
    ApproachGeometry, ArenaConfig, Bed, DistractorSpec, PartKind, PartSpec, PlantGenParams,
    PlantPlacement, PlantSpec, Rect, ScenarioDoc, FLOWER_BASE, HEALTHY_BASE, UNHEALTHY_BASE,
};

use crate::arm::{forward_kinematics, ArmModel, Cuboid, Cylinder, JointVector, TrimOptions};
use crate::drive::{BodyTwist, MecanumGeometry};
use crate::geometry::{normalize_angle, Pose2, Transform, Vec3};
use crate::navigation::NavigationConfig;
use crate::sensor::{CameraIntrinsics, CameraMountConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("scenario parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("scenario io error: {0}")]
    Io(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("plant part unreachable: `{part}` is {distance:.3} m from the nearest approach pose (reach {reach:.3} m)")]
    Unreachable {
        part: String,
        distance: f64,
        reach: f64,
    },
    #[error("unknown part `{0}`")]
    UnknownPart(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChassisSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for ChassisSpec {
    fn default() -> Self {
        Self {
            length: 0.298,
            width: 0.256,
            height: 0.148,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    pub chassis: ChassisSpec,
    pub mecanum: MecanumGeometry,
    /// Speed caps applied by `World::step`.
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    pub arm: ArmModel,
    /// Arm base origin in the chassis frame.
    pub arm_mount: [f64; 3],
    /// Compute stack behind the arm, in the arm base frame.
    pub compute_block: Cuboid,
    pub front_camera: CameraMountConfig,
    pub rear_camera: CameraMountConfig,
    pub intrinsics: CameraIntrinsics,
    pub actuator_stroke: f64,
    /// m/s
    pub actuator_rate: f64,
    pub grasp_tolerance: f64,
    pub dt: f64,
    pub home: JointVector,
    pub navigation: NavigationConfig,
    pub trim: TrimOptions,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            chassis: ChassisSpec::default(),
            mecanum: MecanumGeometry::default(),
            max_linear_speed: 0.30,
            max_angular_speed: 1.5,
            arm: ArmModel::default(),
            arm_mount: [0.10, 0.0, 0.148],
            compute_block: Cuboid {
                min: Vec3::new(-0.25, -0.11, -0.02),
                max: Vec3::new(-0.07, 0.11, 0.10),
            },
            front_camera: CameraMountConfig {
                offset: [0.149, 0.0],
                base_height: 0.12,
                pitch: 0.0,
            },
            rear_camera: CameraMountConfig {
                offset: [-0.12, 0.0],
                base_height: 0.16,
                pitch: 0.0,
            },
            intrinsics: CameraIntrinsics::default(),
            actuator_stroke: 0.125,
            actuator_rate: 0.05,
            grasp_tolerance: 0.015,
            dt: 0.01,
            home: JointVector([0.0, -1.2, 1.4, 0.0, 0.0]),
            navigation: NavigationConfig::default(),
            trim: TrimOptions::default(),
        }
    }
}

impl RobotConfig {
    /// Arm base frame expressed in the world for a given chassis pose.
    pub fn arm_base(&self, chassis: &Pose2) -> Transform {
        chassis
            .to_transform(0.0)
            .compose(&Transform::from_translation(
                self.arm_mount[0],
                self.arm_mount[1],
                self.arm_mount[2],
            ))
    }

    /// World position of the arm shoulder (J2 axis).
    pub fn shoulder_world(&self, chassis: &Pose2) -> Vec3 {
        self.arm_base(chassis).apply(&self.arm.shoulder())
    }

    /// Half extents of the rotated chassis footprint along world x and y.
    pub fn footprint_extents(&self, theta: f64) -> (f64, f64) {
        let (s, c) = theta.sin_cos();
        let (hl, hw) = (self.chassis.length / 2.0, self.chassis.width / 2.0);
        (c.abs() * hl + s.abs() * hw, s.abs() * hl + c.abs() * hw)
    }

    pub fn fits(&self, bounds: &Rect, pose: &Pose2) -> bool {
        let (ex, ey) = self.footprint_extents(pose.theta);
        pose.x - ex >= bounds.x_min - 1e-12
            && pose.x + ex <= bounds.x_max + 1e-12
            && pose.y - ey >= bounds.y_min - 1e-12
            && pose.y + ey <= bounds.y_max + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantPart {
    /// `<plant>/<part>`, unique in the world.
    pub id: String,
    pub kind: PartKind,
    pub center: Vec3,
    pub radius: f64,
    pub surface_normal: Vec3,
    pub color: [u8; 3],
    pub trimmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub id: String,
    pub bed: Bed,
    pub base_pose: Pose2,
    pub stem: Cylinder,
    pub footprint_radius: f64,
    pub parts: Vec<PlantPart>,
    pub near_side: Pose2,
    pub far_side: Pose2,
}

impl Plant {
    /// True when `p` is closer to the near approach pose than the far one.
    pub fn on_near_half(&self, p: &Vec3) -> bool {
        let local = self.base_pose.inverse_transform_point((p.x, p.y));
        local.0 < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub id: String,
    pub center: Vec3,
    pub radius: f64,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperState {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub chassis: Pose2,
    pub chassis_twist: BodyTwist,
    pub joints: JointVector,
    pub actuator_extension: f64,
    pub gripper: GripperState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTarget {
    pub q: JointVector,
    /// Requested move time; joints never exceed their rate limit regardless.
    pub duration_s: f64,
}

/// Everything a controller may ask of the hardware in one step. `None`
/// fields leave the corresponding actuator alone.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuationCommand {
    pub twist: BodyTwist,
    pub joints: Option<JointTarget>,
    pub actuator: Option<f64>,
    pub gripper: Option<GripperState>,
}

impl ActuationCommand {
    pub fn twist(twist: BodyTwist) -> Self {
        Self {
            twist,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum TrimResult {
    Success,
    AlreadyTrimmed,
    Miss { distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorldEvent {
    TwistClamped {
        requested: BodyTwist,
        applied: BodyTwist,
    },
    WallContact,
    ArmArrived,
    ActuatorArrived,
    /// Gripper closed; `part` is the nearest untrimmed part if any exists.
    Grasp {
        part: Option<String>,
        kind: Option<PartKind>,
        tip: Vec3,
        result: TrimResult,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartState {
    pub id: String,
    pub kind: PartKind,
    pub trimmed: bool,
}

/// Read-only copy of the simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub clock: f64,
    pub tick: u64,
    pub robot: RobotState,
    pub parts: Vec<PartState>,
}

impl GroundTruth {
    /// SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("ground truth serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport {
    pub applied_twist: BodyTwist,
    pub events: Vec<WorldEvent>,
}

#[derive(Debug, Clone)]
struct ArmMotion {
    target: JointVector,
    rates: [f64; 5],
}

#[derive(Debug, Clone)]
pub struct World {
    pub scenario: ScenarioDoc,
    pub plants: Vec<Plant>,
    pub distractors: Vec<Distractor>,
    pub robot: RobotState,
    pub clock: f64,
    pub tick: u64,
    pub rng_seed: u64,
    arm_motion: Option<ArmMotion>,
    actuator_target: Option<f64>,
    part_index: BTreeMap<String, (usize, usize)>,
}

fn approach_pose(plant: &Pose2, along: f64, standoff: f64) -> Pose2 {
    let (x, y) = plant.transform_point((along, -standoff));
    let heading = (plant.y - y).atan2(plant.x - x);
    Pose2::new(x, y, heading)
}

fn circle_rect_distance(cx: f64, cy: f64, r: &Rect) -> f64 {
    let dx = (r.x_min - cx).max(0.0).max(cx - r.x_max);
    let dy = (r.y_min - cy).max(0.0).max(cy - r.y_max);
    (dx * dx + dy * dy).sqrt()
}

impl World {
    pub fn load_scenario(text: &str) -> Result<World, WorldError> {
        World::from_scenario(ScenarioDoc::from_json(text)?)
    }

    pub fn from_scenario(doc: ScenarioDoc) -> Result<World, WorldError> {
        doc.check_ids()?;
        let specs = doc.spec_map()?;
        let robot_cfg = &doc.robot;
        robot_cfg
            .arm
            .validate()
            .map_err(|e| WorldError::Invalid(e.to_string()))?;
        robot_cfg
            .mecanum
            .validate()
            .map_err(|e| WorldError::Invalid(e.to_string()))?;
        robot_cfg
            .intrinsics
            .validate()
            .map_err(|e| WorldError::Invalid(e.to_string()))?;
        if !crate::geometry::positive(robot_cfg.dt) {
            return Err(WorldError::Invalid("robot.dt must be positive".into()));
        }
        robot_cfg
            .arm
            .check_limits(&robot_cfg.home)
            .map_err(|e| WorldError::Invalid(format!("home pose: {e}")))?;
        let arena = &doc.arena;
        for (name, r) in [
            ("bounds", &arena.bounds),
            ("start_area", &arena.start_area),
            ("end_area", &arena.end_area),
        ] {
            if !r.is_valid() {
                return Err(WorldError::Invalid(format!("arena.{name} is empty")));
            }
        }
        for (name, r) in [
            ("start_area", &arena.start_area),
            ("end_area", &arena.end_area),
        ] {
            if !arena.bounds.contains_rect(r) {
                return Err(WorldError::Invalid(format!(
                    "arena.{name} lies outside the arena bounds"
                )));
            }
        }
        let corridor = Rect {
            x_min: 0.0,
            x_max: arena.hallway_length,
            y_min: -arena.hallway_width / 2.0,
            y_max: arena.hallway_width / 2.0,
        };

        let mut plants = Vec::new();
        let mut part_index = BTreeMap::new();
        for (bed, placement) in doc.placements() {
            let spec = specs.get(placement.spec.as_str()).ok_or_else(|| {
                WorldError::Invalid(format!(
                    "plant `{}` references unknown spec `{}`",
                    placement.id, placement.spec
                ))
            })?;
            let pose = placement.pose;
            if circle_rect_distance(pose.x, pose.y, &corridor) < spec.footprint_radius {
                return Err(WorldError::Invalid(format!(
                    "plant `{}` footprint overlaps the hallway",
                    placement.id
                )));
            }
            if spec.stem_radius <= 0.0 || spec.stem_height <= 0.0 {
                return Err(WorldError::Invalid(format!(
                    "spec `{}` has a degenerate stem",
                    spec.id
                )));
            }
            let near_side = placement.near_side.unwrap_or_else(|| {
                approach_pose(&pose, -arena.approach.along, arena.approach.standoff)
            });
            let far_side = placement.far_side.unwrap_or_else(|| {
                approach_pose(&pose, arena.approach.along, arena.approach.standoff)
            });
            let rot = Transform::rot_z(pose.theta);
            let mut parts = Vec::new();
            for ps in &spec.parts {
                let id = format!("{}/{}", placement.id, ps.id);
                if !crate::geometry::positive(ps.radius) {
                    return Err(WorldError::Invalid(format!(
                        "part `{id}` must have a positive radius"
                    )));
                }
                let n = Vec3::from(ps.normal);
                if n.norm() < 1e-9 {
                    return Err(WorldError::Invalid(format!(
                        "part `{id}` has a zero normal"
                    )));
                }
                let (x, y) = pose.transform_point((ps.offset[0], ps.offset[1]));
                let center = Vec3::new(x, y, ps.offset[2]);
                let reach = robot_cfg.arm.gripper_reach_total;
                let distance = [near_side, far_side]
                    .iter()
                    .map(|a| (robot_cfg.shoulder_world(a) - center).norm())
                    .fold(f64::INFINITY, f64::min);
                // Healthy clusters are never cut, so only targets must be in reach.
                if ps.kind != PartKind::Healthy && distance > reach {
                    return Err(WorldError::Unreachable {
                        part: id,
                        distance,
                        reach,
                    });
                }
                part_index.insert(id.clone(), (plants.len(), parts.len()));
                parts.push(PlantPart {
                    id,
                    kind: ps.kind,
                    center,
                    radius: ps.radius,
                    surface_normal: rot.apply_vector(&n.normalize()),
                    color: ps.color,
                    trimmed: false,
                });
            }
            plants.push(Plant {
                id: placement.id.clone(),
                bed,
                base_pose: pose,
                stem: Cylinder::vertical(
                    Vec3::new(pose.x, pose.y, 0.0),
                    spec.stem_radius,
                    spec.stem_height,
                ),
                footprint_radius: spec.footprint_radius,
                parts,
                near_side,
                far_side,
            });
        }
        let distractors = doc
            .distractors
            .iter()
            .map(|d| {
                if d.radius > 0.0 {
                    Ok(Distractor {
                        id: d.id.clone(),
                        center: Vec3::from(d.center),
                        radius: d.radius,
                        color: d.color,
                    })
                } else {
                    Err(WorldError::Invalid(format!(
                        "distractor `{}` must have a positive radius",
                        d.id
                    )))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;

        let (sx, sy) = arena.start_area.center();
        let start = Pose2::new(sx, sy, 0.0);
        if !robot_cfg.fits(&arena.bounds, &start) {
            return Err(WorldError::Invalid(
                "chassis does not fit at the start pose".into(),
            ));
        }
        let robot = RobotState {
            chassis: start,
            chassis_twist: BodyTwist::ZERO,
            joints: robot_cfg.home,
            actuator_extension: 0.0,
            gripper: GripperState::Open,
        };
        Ok(World {
            rng_seed: doc.seed,
            scenario: doc,
            plants,
            distractors,
            robot,
            clock: 0.0,
            tick: 0,
            arm_motion: None,
            actuator_target: None,
            part_index,
        })
    }

    pub fn config(&self) -> &RobotConfig {
        &self.scenario.robot
    }

    pub fn arena(&self) -> &ArenaConfig {
        &self.scenario.arena
    }

    pub fn dt(&self) -> f64 {
        self.scenario.robot.dt
    }

    pub fn part(&self, id: &str) -> Option<&PlantPart> {
        self.part_index
            .get(id)
            .map(|&(p, i)| &self.plants[p].parts[i])
    }

    pub fn parts(&self) -> impl Iterator<Item = &PlantPart> {
        self.plants.iter().flat_map(|p| p.parts.iter())
    }

    pub fn arm_busy(&self) -> bool {
        self.arm_motion.is_some()
    }

    pub fn actuator_busy(&self) -> bool {
        self.actuator_target.is_some()
    }

    /// World pose of the gripper tip.
    pub fn gripper_tip(&self) -> Vec3 {
        let cfg = self.config();
        let tip = forward_kinematics(&cfg.arm, &self.robot.joints)
            .expect("joints stay inside limits")
            .position;
        cfg.arm_base(&self.robot.chassis).apply(&tip)
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            clock: self.clock,
            tick: self.tick,
            robot: self.robot,
            parts: self
                .parts()
                .map(|p| PartState {
                    id: p.id.clone(),
                    kind: p.kind,
                    trimmed: p.trimmed,
                })
                .collect(),
        }
    }

    pub fn trimmed_count(&self) -> usize {
        self.parts().filter(|p| p.trimmed).count()
    }

    /// Attempts to trim `part_id` with the gripper tip at `tip` (world frame).
    pub fn trim_part(&mut self, part_id: &str, tip: &Vec3) -> Result<TrimResult, WorldError> {
        let &(p, i) = self
            .part_index
            .get(part_id)
            .ok_or_else(|| WorldError::UnknownPart(part_id.to_string()))?;
        let tol = self.scenario.robot.grasp_tolerance;
        let part = &mut self.plants[p].parts[i];
        if part.trimmed {
            return Ok(TrimResult::AlreadyTrimmed);
        }
        let distance = (tip - part.center).norm();
        if distance <= tol {
            part.trimmed = true;
            Ok(TrimResult::Success)
        } else {
            Ok(TrimResult::Miss { distance })
        }
    }

    /// Advances the simulation by `dt` seconds under `cmd`.
    pub fn step(&mut self, dt: f64, cmd: &ActuationCommand) -> StepReport {
        let mut events = Vec::new();
        let cfg = self.scenario.robot.clone();

        if let Some(t) = cmd.joints {
            let target = cfg.arm.clamp(&t.q);
            let rates = std::array::from_fn(|i| {
                let delta = (target.0[i] - self.robot.joints.0[i]).abs();
                let wanted = if t.duration_s > 0.0 {
                    delta / t.duration_s
                } else {
                    f64::INFINITY
                };
                wanted.min(cfg.arm.joints[i].max_rate)
            });
            self.arm_motion = Some(ArmMotion { target, rates });
        }
        if let Some(ext) = cmd.actuator {
            self.actuator_target = Some(ext.clamp(0.0, cfg.actuator_stroke));
        }

        let (applied, clamped) = cmd
            .twist
            .clamped(cfg.max_linear_speed, cfg.max_angular_speed);
        if clamped {
            events.push(WorldEvent::TwistClamped {
                requested: cmd.twist,
                applied,
            });
        }
        let next = integrate_twist(&self.robot.chassis, &applied, dt);
        let (bounded, contact) = clamp_to_bounds(&cfg, &self.scenario.arena.bounds, next);
        if contact {
            events.push(WorldEvent::WallContact);
        }
        self.robot.chassis = bounded;
        self.robot.chassis_twist = applied;

        if let Some(motion) = &self.arm_motion {
            let mut done = true;
            let mut q = self.robot.joints;
            for i in 0..5 {
                let remaining = motion.target.0[i] - q.0[i];
                let max_step = motion.rates[i] * dt;
                if remaining.abs() <= max_step + 1e-12 {
                    q.0[i] = motion.target.0[i];
                } else {
                    q.0[i] += max_step.copysign(remaining);
                    done = false;
                }
            }
            self.robot.joints = q;
            if done {
                self.arm_motion = None;
                events.push(WorldEvent::ArmArrived);
            }
        }
        if let Some(target) = self.actuator_target {
            let remaining = target - self.robot.actuator_extension;
            let max_step = cfg.actuator_rate * dt;
            if remaining.abs() <= max_step + 1e-12 {
                self.robot.actuator_extension = target;
                self.actuator_target = None;
                events.push(WorldEvent::ActuatorArrived);
            } else {
                self.robot.actuator_extension += max_step.copysign(remaining);
            }
        }

        if let Some(g) = cmd.gripper {
            if g == GripperState::Closed && self.robot.gripper == GripperState::Open {
                events.push(self.resolve_grasp());
            }
            self.robot.gripper = g;
        }

        self.clock += dt;
        self.tick += 1;
        StepReport {
            applied_twist: applied,
            events,
        }
    }

    fn resolve_grasp(&mut self) -> WorldEvent {
        let tip = self.gripper_tip();
        let nearest = self
            .parts()
            .filter(|p| !p.trimmed)
            .map(|p| ((p.center - tip).norm(), p.id.clone(), p.kind))
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        match nearest {
            None => WorldEvent::Grasp {
                part: None,
                kind: None,
                tip,
                result: TrimResult::Miss {
                    distance: f64::INFINITY,
                },
            },
            Some((_, id, kind)) => {
                let result = self.trim_part(&id, &tip).expect("id came from the world");
                WorldEvent::Grasp {
                    part: Some(id),
                    kind: Some(kind),
                    tip,
                    result,
                }
            }
        }
    }
}

/// Exact pose after holding a body-frame twist for `dt`.
pub fn integrate_twist(pose: &Pose2, twist: &BodyTwist, dt: f64) -> Pose2 {
    let w = twist.omega;
    let dtheta = w * dt;
    let (dx, dy) = if w.abs() < 1e-12 {
        (twist.vx * dt, twist.vy * dt)
    } else {
        let (s, c) = dtheta.sin_cos();
        (
            (twist.vx * s + twist.vy * (c - 1.0)) / w,
            (twist.vx * (1.0 - c) + twist.vy * s) / w,
        )
    };
    let (st, ct) = pose.theta.sin_cos();
    Pose2::new(
        pose.x + ct * dx - st * dy,
        pose.y + st * dx + ct * dy,
        normalize_angle(pose.theta + dtheta),
    )
}

fn clamp_to_bounds(cfg: &RobotConfig, bounds: &Rect, pose: Pose2) -> (Pose2, bool) {
    let (ex, ey) = cfg.footprint_extents(pose.theta);
    let x = pose.x.clamp(bounds.x_min + ex, bounds.x_max - ex);
    let y = pose.y.clamp(bounds.y_min + ey, bounds.y_max - ey);
    let contact = x != pose.x || y != pose.y;
    (Pose2::new(x, y, pose.theta), contact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn minimal() -> World {
        World::from_scenario(minimal_scenario()).unwrap()
    }

    #[test]
    fn minimal_loads_at_clock_zero() {
        let w = minimal();
        assert_eq!(w.plants.len(), 1);
        assert_eq!(w.plants[0].parts.len(), 1);
        assert_eq!(w.clock, 0.0);
        let (x, y) = w.arena().start_area.center();
        assert_eq!((w.robot.chassis.x, w.robot.chassis.y), (x, y));
    }

    #[test]
    fn unreachable_part_is_rejected() {
        let mut doc = minimal_scenario();
        doc.plant_specs[0].parts[0].offset = [0.0, 0.6, 0.2];
        match World::from_scenario(doc) {
            Err(WorldError::Unreachable { part, distance, .. }) => {
                assert_eq!(part, "A1/u0");
                assert!(distance > 0.6);
            }
            other => panic!("expected unreachable, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_names_path() {
        let mut v: serde_json::Value =
            serde_json::from_str(&minimal_scenario().to_json_pretty()).unwrap();
        v["plant_specs"][0]["parts"][0]["radius"] = serde_json::json!("big");
        let err = World::load_scenario(&v.to_string()).unwrap_err();
        match err {
            WorldError::Parse { path, .. } => assert_eq!(path, "plant_specs[0].parts[0].radius"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn footprint_in_hallway_rejected() {
        let mut doc = minimal_scenario();
        doc.arena.bed_a[0].pose.y = 0.45;
        assert!(matches!(
            World::from_scenario(doc),
            Err(WorldError::Invalid(_))
        ));
    }

    #[test]
    fn zero_command_only_advances_clock() {
        let mut w = minimal();
        let before = w.robot;
        w.step(0.37, &ActuationCommand::default());
        assert_eq!(w.robot.chassis, before.chassis);
        assert_abs_diff_eq!(w.clock, 0.37);
    }

    #[test]
    fn straight_line_at_ten_centimetres_per_second() {
        let mut w = minimal();
        w.robot.chassis = Pose2::new(0.5, 0.0, 0.0);
        let cmd = ActuationCommand::twist(BodyTwist {
            vx: 0.10,
            vy: 0.0,
            omega: 0.0,
        });
        for _ in 0..1000 {
            w.step(0.01, &cmd);
        }
        assert_abs_diff_eq!(w.robot.chassis.x, 1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(w.robot.chassis.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_rotation_quarter_turn() {
        let mut w = minimal();
        w.robot.chassis = Pose2::new(1.0, 0.0, 0.0);
        let cmd = ActuationCommand::twist(BodyTwist {
            vx: 0.0,
            vy: 0.0,
            omega: PI / 10.0,
        });
        for _ in 0..500 {
            w.step(0.01, &cmd);
        }
        assert_abs_diff_eq!(w.robot.chassis.theta, PI / 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(w.robot.chassis.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.robot.chassis.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn walls_clamp_and_flag() {
        let mut w = minimal();
        w.robot.chassis = Pose2::new(1.0, 0.2, 0.0);
        let cmd = ActuationCommand::twist(BodyTwist {
            vx: 0.0,
            vy: 0.3,
            omega: 0.0,
        });
        let mut hit = false;
        for _ in 0..200 {
            hit |= w.step(0.01, &cmd).events.contains(&WorldEvent::WallContact);
        }
        assert!(hit);
        assert_abs_diff_eq!(w.robot.chassis.y, 0.4 - 0.128, epsilon = 1e-12);
    }

    #[test]
    fn speed_cap_is_flagged() {
        let mut w = minimal();
        let r = w.step(
            0.01,
            &ActuationCommand::twist(BodyTwist {
                vx: 1.0,
                vy: 0.0,
                omega: 0.0,
            }),
        );
        assert!(matches!(r.events[0], WorldEvent::TwistClamped { .. }));
        assert!(r.applied_twist.vx <= 0.30 + 1e-12);
    }

    #[test]
    fn trim_tolerance_boundary() {
        let mut w = minimal();
        let c = w.part("A1/u0").unwrap().center;
        match w
            .trim_part("A1/u0", &(c + Vec3::new(0.05, 0.0, 0.0)))
            .unwrap()
        {
            TrimResult::Miss { distance } => assert_abs_diff_eq!(distance, 0.05, epsilon = 1e-12),
            other => panic!("expected a miss, got {other:?}"),
        }
        assert_eq!(
            w.trim_part("A1/u0", &(c + Vec3::new(0.0, 0.014, 0.0)))
                .unwrap(),
            TrimResult::Success
        );
        assert_eq!(
            w.trim_part("A1/u0", &c).unwrap(),
            TrimResult::AlreadyTrimmed
        );
        assert!(w.part("A1/u0").unwrap().trimmed);
        assert!(matches!(
            w.trim_part("nope", &c),
            Err(WorldError::UnknownPart(_))
        ));
    }

    #[test]
    fn joints_respect_rate_limit() {
        let mut w = minimal();
        let target = JointVector([1.0, 0.0, 0.0, 0.0, 0.0]);
        let start = w.robot.joints;
        w.step(
            0.01,
            &ActuationCommand {
                joints: Some(JointTarget {
                    q: target,
                    duration_s: 0.0,
                }),
                ..Default::default()
            },
        );
        assert!(w.robot.joints.max_abs_diff(&start) <= 2.0 * 0.01 + 1e-12);
        let mut arrived = false;
        for _ in 0..200 {
            arrived |= w
                .step(0.01, &ActuationCommand::default())
                .events
                .contains(&WorldEvent::ArmArrived);
        }
        assert!(arrived);
        assert_eq!(w.robot.joints, target);
    }

    #[test]
    fn actuator_stays_in_stroke() {
        let mut w = minimal();
        w.step(
            0.01,
            &ActuationCommand {
                actuator: Some(0.5),
                ..Default::default()
            },
        );
        for _ in 0..400 {
            w.step(0.01, &ActuationCommand::default());
        }
        assert_eq!(w.robot.actuator_extension, 0.125);
    }

    #[test]
    fn default_scenario_has_six_plants_at_start() {
        let w = World::from_scenario(default_scenario(3)).unwrap();
        assert_eq!(w.plants.len(), 6);
        assert_eq!(
            (w.robot.chassis.x, w.robot.chassis.y, w.robot.chassis.theta),
            (-0.4, 0.2, 0.0)
        );
    }

    #[test]
    fn digest_changes_with_state() {
        let mut w = minimal();
        let a = w.ground_truth().digest();
        w.step(0.01, &ActuationCommand::default());
        assert_ne!(a, w.ground_truth().digest());
    }

    proptest::proptest! {
        #[test]
        fn split_step_matches_single(
            vx in -0.3f64..0.3, vy in -0.3f64..0.3, w in -1.5f64..1.5,
            theta in -3.1f64..3.1, dt in 0.001f64..0.5,
        ) {
            let pose = Pose2::new(1.0, 0.0, theta);
            let t = BodyTwist { vx, vy, omega: w };
            let one = integrate_twist(&pose, &t, dt);
            let half = integrate_twist(&pose, &t, dt / 2.0);
            let two = integrate_twist(&half, &t, dt / 2.0);
            proptest::prop_assert!((one.x - two.x).abs() <= 1e-9);
            proptest::prop_assert!((one.y - two.y).abs() <= 1e-9);
            proptest::prop_assert!(crate::geometry::normalize_angle(one.theta - two.theta).abs() <= 1e-9);
        }
    }
}

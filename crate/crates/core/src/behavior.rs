//! Mission executive: a monotone phase machine over the two beds, the
//! flower-skip trimming policy, and the loop that drives every subsystem
//! through the bridge.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{plan_trim, radians_to_servo, Cuboid, JointVector, ObstacleSet, TrimPlan};
use crate::bridge::{Command, CommandState, Loopback, SimHost, StepPolicy, Transport, WireRequest};
use crate::drive::BodyTwist;
use crate::geometry::{Pose2, Transform, Vec3};
use crate::harness::trace::{CaptureLabel, MissionEvent, TraceWriter};
use crate::navigation::{check_segment, navigate_with, Drivable, Localizer, NavGoal, NavOutcome};
use crate::perception::{detect_parts, Detection};
use crate::sensor::{
    camera_pose, optical_pose, render_with, CameraMount, MountState, Ownership, RenderOptions,
};
use crate::world::{Bed, GripperState, GroundTruth, PartKind, RobotState, World};

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error("trace io: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    /// No side-A plant is started after this much mission time (s).
    pub budget_side_a: f64,
    pub budget_side_b: f64,
    pub total_budget: f64,
    pub actuator_extension: f64,
    /// Attempts per target, counting the first.
    pub max_trim_attempts: u32,
    /// Detections within this distance of a known part are the same part (m).
    pub association_radius: f64,
    /// Detections farther than this from every stem are ignored (m).
    pub plant_radius: f64,
    /// Idle time before each capture (s).
    pub settle_time: f64,
    /// Fraction of the joint rate limit used when timing servo moves.
    pub servo_speed_fraction: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            budget_side_a: 135.0,
            budget_side_b: 285.0,
            total_budget: 300.0,
            actuator_extension: 0.125,
            max_trim_attempts: 2,
            association_radius: 0.03,
            plant_radius: 0.16,
            settle_time: 0.2,
            servo_speed_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionPhase {
    GoToIntersection,
    ProcessSideA,
    TransitAndTurn,
    ProcessSideB,
    ReturnToEnd,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Near,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Navigate { goal: Pose2 },
    RaiseActuator,
    ProcessPlant { plant: String, side: Side },
    Turn180,
    Finish,
}

/// Progress flags the executive cannot derive from the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Observations {
    pub at_intersection: bool,
    pub actuator_raised: bool,
    pub transit_done: bool,
    pub at_end: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MissionClock {
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRecord {
    pub id: String,
    pub kind: PartKind,
    /// Estimated world position (running mean over sightings).
    pub position: Vec3,
    pub sightings: u32,
    /// Horizontal distance from the stem axis.
    pub stem_distance: f64,
    /// First seen on the half facing the near approach pose.
    pub near_half: bool,
    pub detected: bool,
    pub targeted: bool,
    pub trimmed: bool,
    pub attempts: u32,
    /// Left on purpose by the flower policy.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantRecord {
    pub id: String,
    pub bed: Bed,
    /// Position along the bed's travel direction; visits go in increasing order.
    pub order: f64,
    pub stem: Vec3,
    pub near_pose: Pose2,
    pub far_pose: Pose2,
    pub discovered: bool,
    pub near: VisitStatus,
    pub far: VisitStatus,
    pub flowers_remaining_near_side: u32,
    pub parts: Vec<PartRecord>,
}

impl PlantRecord {
    pub fn visit(&self, side: Side) -> VisitStatus {
        match side {
            Side::Near => self.near,
            Side::Far => self.far,
        }
    }

    pub fn fully_processed(&self) -> bool {
        self.near == VisitStatus::Done && self.far == VisitStatus::Done
    }

    fn next_part_id(&self, kind: PartKind) -> String {
        let n = self.parts.iter().filter(|p| p.kind == kind).count();
        let tag = match kind {
            PartKind::Healthy => 'h',
            PartKind::Unhealthy => 'u',
            PartKind::Flower => 'f',
        };
        format!("{}/{tag}{n}", self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantLedger {
    pub plants: Vec<PlantRecord>,
}

impl PlantLedger {
    /// One record per plant on the map, nothing discovered yet.
    pub fn from_world(world: &World) -> Self {
        let plants = world
            .plants
            .iter()
            .map(|p| {
                let (s, c) = p.base_pose.theta.sin_cos();
                PlantRecord {
                    id: p.id.clone(),
                    bed: p.bed,
                    order: p.base_pose.x * c + p.base_pose.y * s,
                    stem: p.stem.base,
                    near_pose: p.near_side,
                    far_pose: p.far_side,
                    discovered: false,
                    near: VisitStatus::Pending,
                    far: VisitStatus::Pending,
                    flowers_remaining_near_side: 0,
                    parts: Vec::new(),
                }
            })
            .collect();
        Self { plants }
    }

    pub fn plant(&self, id: &str) -> Option<&PlantRecord> {
        self.plants.iter().find(|p| p.id == id)
    }

    fn plant_mut(&mut self, id: &str) -> Option<&mut PlantRecord> {
        self.plants.iter_mut().find(|p| p.id == id)
    }

    pub fn has_discovered(&self, bed: Bed) -> bool {
        self.plants.iter().any(|p| p.bed == bed && p.discovered)
    }

    /// Next pending visit on `bed`, nearest-next along the travel direction.
    pub fn next_visit(&self, bed: Bed) -> Option<(String, Side)> {
        let mut plants: Vec<&PlantRecord> = self
            .plants
            .iter()
            .filter(|p| p.bed == bed && p.discovered)
            .collect();
        plants.sort_by(|a, b| a.order.total_cmp(&b.order).then_with(|| a.id.cmp(&b.id)));
        plants.into_iter().find_map(|p| {
            [Side::Near, Side::Far]
                .into_iter()
                .find(|&s| p.visit(s) == VisitStatus::Pending)
                .map(|s| (p.id.clone(), s))
        })
    }

    /// trimmed => targeted => detected, for every part.
    pub fn is_consistent(&self) -> bool {
        self.plants
            .iter()
            .flat_map(|p| &p.parts)
            .all(|r| (!r.trimmed || r.targeted) && (!r.targeted || r.detected))
    }
}

/// Pure executive step: the phase to be in and what to do next.
pub fn next_action(
    phase: MissionPhase,
    ledger: &PlantLedger,
    clock: &MissionClock,
    obs: &Observations,
    cfg: &MissionConfig,
    arena_intersection: Pose2,
    arena_end: Pose2,
) -> (MissionPhase, Action) {
    if phase == MissionPhase::Done || clock.elapsed >= cfg.total_budget {
        return (MissionPhase::Done, Action::Finish);
    }
    let side = |bed: Bed, budget: f64, this: MissionPhase| -> Option<(MissionPhase, Action)> {
        if !obs.actuator_raised && ledger.has_discovered(bed) {
            return Some((this, Action::RaiseActuator));
        }
        if clock.elapsed < budget {
            if let Some((plant, side)) = ledger.next_visit(bed) {
                return Some((this, Action::ProcessPlant { plant, side }));
            }
        }
        None
    };
    let after_transit = || {
        if ledger.has_discovered(Bed::B) {
            if let Some(next) = side(Bed::B, cfg.budget_side_b, MissionPhase::ProcessSideB) {
                return next;
            }
        }
        if obs.at_end {
            (MissionPhase::Done, Action::Finish)
        } else {
            (
                MissionPhase::ReturnToEnd,
                Action::Navigate { goal: arena_end },
            )
        }
    };
    match phase {
        MissionPhase::GoToIntersection if !obs.at_intersection => (
            phase,
            Action::Navigate {
                goal: arena_intersection,
            },
        ),
        MissionPhase::GoToIntersection | MissionPhase::ProcessSideA => {
            if ledger.has_discovered(Bed::A) {
                if let Some(next) = side(Bed::A, cfg.budget_side_a, MissionPhase::ProcessSideA) {
                    return next;
                }
            }
            if obs.transit_done {
                after_transit()
            } else {
                (MissionPhase::TransitAndTurn, Action::Turn180)
            }
        }
        MissionPhase::TransitAndTurn if !obs.transit_done => (phase, Action::Turn180),
        MissionPhase::TransitAndTurn | MissionPhase::ProcessSideB => after_transit(),
        MissionPhase::ReturnToEnd if !obs.at_end => (phase, Action::Navigate { goal: arena_end }),
        MissionPhase::ReturnToEnd | MissionPhase::Done => (MissionPhase::Done, Action::Finish),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowerCandidate {
    pub id: String,
    pub stem_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowerPlan {
    pub trim: Vec<String>,
    pub skip: Option<String>,
}

/// Which flowers to trim on one visit. Near side: all but the one closest to
/// the stem. Far side: everything when the near side left a flower, otherwise
/// all but the one closest to the stem.
pub fn flower_trim_plan(
    side: Side,
    flowers: &[FlowerCandidate],
    flowers_remaining_near_side: u32,
) -> FlowerPlan {
    let keep_one = match side {
        Side::Near => true,
        Side::Far => flowers_remaining_near_side.min(1) == 0,
    };
    let mut sorted: Vec<&FlowerCandidate> = flowers.iter().collect();
    sorted.sort_by(|a, b| {
        a.stem_distance
            .total_cmp(&b.stem_distance)
            .then_with(|| a.id.cmp(&b.id))
    });
    let skip = if keep_one {
        sorted.first().map(|f| f.id.clone())
    } else {
        None
    };
    let mut trim: Vec<String> = sorted
        .iter()
        .filter(|f| Some(&f.id) != skip.as_ref())
        .map(|f| f.id.clone())
        .collect();
    trim.sort();
    FlowerPlan { trim, skip }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseStamp {
    pub phase: MissionPhase,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionRun {
    pub completed: bool,
    pub trace_hash: String,
    pub trace_records: u64,
    pub phases: Vec<PhaseStamp>,
    pub ledger: PlantLedger,
    pub truth: GroundTruth,
    pub arrivals: Vec<NavOutcome>,
}

/// The mission's view of the hardware: every actuation goes through the
/// bridge and every sim step leaves one trace record.
struct Link<'w> {
    host: SimHost,
    trace: TraceWriter<'w>,
    phase: MissionPhase,
    cmds: Vec<Command>,
    events: Vec<MissionEvent>,
    last_twist: BodyTwist,
}

impl Link<'_> {
    fn submit(&mut self, cmd: Command) -> Option<String> {
        let resp = Loopback {
            host: &mut self.host,
        }
        .send(&WireRequest::command(&cmd));
        self.cmds.push(cmd);
        if resp.status == 202 {
            resp.json()["data"]["token"].as_str().map(String::from)
        } else {
            self.events.push(MissionEvent::Anomaly {
                message: format!("bridge rejected {}: {}", cmd.name(), resp.body),
            });
            None
        }
    }

    fn set_twist(&mut self, twist: BodyTwist) {
        if twist != self.last_twist {
            self.submit(Command::Chassis(twist));
            self.last_twist = twist;
        }
    }

    fn step(&mut self) -> Result<(), std::io::Error> {
        let report = self.host.step().clone();
        let world = self.host.world();
        let cmds = std::mem::take(&mut self.cmds);
        let events = std::mem::take(&mut self.events);
        self.trace.step(
            world.tick,
            world.clock,
            self.phase,
            &world.robot,
            &cmds,
            &report.events,
            &events,
        )
    }

    fn clock(&self) -> f64 {
        self.host.world().clock
    }

    fn robot(&self) -> RobotState {
        self.host.world().robot
    }

    fn idle(&mut self, seconds: f64) -> Result<(), std::io::Error> {
        self.set_twist(BodyTwist::ZERO);
        let n = (seconds / self.host.world().dt()).round() as u64;
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }

    /// Steps until the command behind `token` completes or `timeout` passes.
    fn wait(&mut self, token: Option<String>, timeout: f64) -> Result<bool, std::io::Error> {
        let Some(token) = token else { return Ok(false) };
        let t0 = self.clock();
        loop {
            if self.host.command_status(&token).map(|s| s.state) == Some(CommandState::Done) {
                return Ok(true);
            }
            if self.clock() - t0 > timeout {
                return Ok(false);
            }
            self.step()?;
        }
    }
}

impl Drivable for Link<'_> {
    fn dt(&self) -> f64 {
        self.host.world().dt()
    }

    fn clock(&self) -> f64 {
        self.host.world().clock
    }

    fn true_pose(&self) -> Pose2 {
        self.host.world().robot.chassis
    }

    fn drive(&mut self, twist: BodyTwist) -> BodyTwist {
        self.set_twist(twist);
        // Trace failures surface at the next explicit step.
        if let Err(e) = self.step() {
            self.trace.fail(e);
        }
        self.host.last_report().applied_twist
    }
}

struct Capture {
    detections: Vec<Detection>,
    /// Optical frame to chassis frame.
    chassis_from_optical: Transform,
}

struct Mission<'w> {
    link: Link<'w>,
    loc: Localizer,
    ledger: PlantLedger,
    cfg: MissionConfig,
    obs: Observations,
    phases: Vec<PhaseStamp>,
    arrivals: Vec<NavOutcome>,
    captures: u64,
}

/// Runs a full mission on `world`, writing the JSON-lines trace to `sink`.
pub fn run_mission(world: World, sink: &mut dyn Write) -> Result<MissionRun, BehaviorError> {
    let cfg = world.scenario.mission;
    let nav = world.config().navigation;
    let seed = world.scenario.seed;
    let mut trace = TraceWriter::new(sink);
    trace.header(&world.scenario)?;
    let ledger = PlantLedger::from_world(&world);
    let mut m = Mission {
        link: Link {
            host: SimHost::with_options(
                world,
                crate::bridge::DEFAULT_QUEUE_CAPACITY,
                StepPolicy::Manual,
            ),
            trace,
            phase: MissionPhase::GoToIntersection,
            cmds: Vec::new(),
            events: Vec::new(),
            last_twist: BodyTwist::ZERO,
        },
        loc: Localizer::new(nav.noise, nav.filter_gain, seed ^ 0x10c4_11ce),
        ledger,
        cfg,
        obs: Observations::default(),
        phases: Vec::new(),
        arrivals: Vec::new(),
        captures: 0,
    };
    m.phases.push(PhaseStamp {
        phase: MissionPhase::GoToIntersection,
        t: 0.0,
    });
    m.loc.correct(&m.link.true_pose());
    let completed = m.run()?;
    m.link.trace.check()?;
    let truth = m.link.host.world().ground_truth();
    m.link.trace.end(&truth, completed, &m.phases, &m.ledger)?;
    let (trace_hash, trace_records) = m.link.trace.finish()?;
    Ok(MissionRun {
        completed,
        trace_hash,
        trace_records,
        phases: m.phases,
        ledger: m.ledger,
        truth,
        arrivals: m.arrivals,
    })
}

impl Mission<'_> {
    fn run(&mut self) -> Result<bool, BehaviorError> {
        let arena = self.link.host.world().arena().clone();
        loop {
            self.link.trace.check()?;
            let clock = MissionClock {
                elapsed: self.link.clock(),
            };
            let (phase, action) = next_action(
                self.link.phase,
                &self.ledger,
                &clock,
                &self.obs,
                &self.cfg,
                arena.intersection,
                arena.end_pose,
            );
            if phase != self.link.phase {
                self.link.events.push(MissionEvent::Phase {
                    from: self.link.phase,
                    to: phase,
                });
                self.phases.push(PhaseStamp {
                    phase,
                    t: clock.elapsed,
                });
                log::info!(
                    "t={:.2} phase {:?} -> {:?}",
                    clock.elapsed,
                    self.link.phase,
                    phase
                );
                self.link.phase = phase;
            }
            match action {
                Action::Finish => return Ok(self.obs.at_end),
                Action::Navigate { goal } => {
                    let label = if phase == MissionPhase::GoToIntersection {
                        "intersection"
                    } else {
                        "end"
                    };
                    self.go(goal, label)?;
                    if phase == MissionPhase::GoToIntersection {
                        self.obs.at_intersection = true;
                        self.survey("intersection")?;
                    } else {
                        self.obs.at_end = true;
                    }
                }
                Action::RaiseActuator => {
                    let token = self.link.submit(Command::Actuator {
                        extension_m: self.cfg.actuator_extension,
                    });
                    let rate = self.link.host.world().config().actuator_rate;
                    let ok = self
                        .link
                        .wait(token, 1.0 + self.cfg.actuator_extension / rate)?;
                    if !ok {
                        self.link.events.push(MissionEvent::Anomaly {
                            message: "actuator did not report arrival".into(),
                        });
                    }
                    self.obs.actuator_raised = true;
                }
                Action::Turn180 => {
                    let far = arena.far_end;
                    self.go(far, "far_end")?;
                    let turned = Pose2::new(far.x, far.y, far.theta + std::f64::consts::PI);
                    self.go(turned, "turn")?;
                    self.obs.transit_done = true;
                    self.survey("far_end")?;
                }
                Action::ProcessPlant { plant, side } => {
                    let status = self.process(&plant, side)?;
                    let rec = self
                        .ledger
                        .plant_mut(&plant)
                        .expect("plant came from the ledger");
                    match side {
                        Side::Near => rec.near = status,
                        Side::Far => rec.far = status,
                    }
                    self.link.events.push(MissionEvent::Visit {
                        plant,
                        side,
                        status,
                    });
                }
            }
        }
    }

    fn go(&mut self, pose: Pose2, label: &str) -> Result<NavOutcome, BehaviorError> {
        let nav = self.link.host.world().config().navigation;
        let goal = NavGoal::new(pose, &nav);
        let outcome = navigate_with(&mut self.link, &mut self.loc, &goal, &nav, |_, _, _| {});
        self.link.set_twist(BodyTwist::ZERO);
        self.link.events.push(MissionEvent::Nav {
            label: label.into(),
            goal: pose,
            outcome,
        });
        self.arrivals.push(outcome);
        self.link.trace.check()?;
        Ok(outcome)
    }

    /// Renders the rear camera and runs perception. Ground-truth labels only
    /// go to the trace.
    fn capture(&mut self, label: &str, plant: Option<&str>) -> Result<Capture, BehaviorError> {
        self.link.idle(self.cfg.settle_time)?;
        let world = self.link.host.world();
        let robot = world.robot;
        let mount = MountState::of(&robot, CameraMount::RearActuator);
        let cam = camera_pose(&robot, &mount, world.config());
        let pcfg = &world.scenario.perception;
        let opts = RenderOptions {
            depth_noise_sigma: pcfg.depth_noise_sigma,
            noise_seed: world
                .scenario
                .seed
                .wrapping_mul(0x9e37_79b9)
                .wrapping_add(self.captures),
        };
        self.captures += 1;
        let (frame, owner) = render_with(world, &cam, &world.config().intrinsics, &opts);
        let result = detect_parts(&frame, pcfg);
        let labels = CaptureLabel::from_frame(&frame, &owner, &result.detections, pcfg.min_area);
        let at_origin = RobotState {
            chassis: Pose2::new(0.0, 0.0, 0.0),
            ..robot
        };
        let chassis_from_optical = optical_pose(&camera_pose(&at_origin, &mount, world.config()));
        self.discover(&owner);
        self.link.events.push(MissionEvent::Capture {
            label: label.into(),
            plant: plant.map(String::from),
            detections: result.detections.len(),
            rejected: result.rejected.len(),
            labels,
        });
        Ok(Capture {
            detections: result.detections,
            chassis_from_optical,
        })
    }

    fn discover(&mut self, owner: &Ownership) {
        let counts = owner.pixel_counts();
        for (i, obj) in owner.objects.iter().enumerate() {
            let plant = match obj {
                crate::sensor::ObjectRef::Stem { plant } => plant.as_str(),
                crate::sensor::ObjectRef::Part { id, .. } => id.split('/').next().unwrap_or(""),
                crate::sensor::ObjectRef::Distractor { .. } => continue,
            };
            if counts.get(i).copied().unwrap_or(0) == 0 {
                continue;
            }
            if let Some(rec) = self.ledger.plant_mut(plant) {
                if !rec.discovered {
                    rec.discovered = true;
                    self.link.events.push(MissionEvent::Discovered {
                        plant: plant.to_string(),
                    });
                }
            }
        }
    }

    fn survey(&mut self, label: &str) -> Result<(), BehaviorError> {
        self.capture(label, None)?;
        Ok(())
    }

    /// Associates `cap` with ledger parts of `plant`; returns ledger index and
    /// arm-frame position for each part seen.
    fn associate(&mut self, plant: &str, cap: &Capture) -> BTreeMap<usize, Vec3> {
        let est = self.loc.estimate().pose;
        let cfg = self.link.host.world().config().clone();
        let world_from_chassis = est.to_transform(0.0);
        let arm_from_chassis =
            Transform::from_translation(cfg.arm_mount[0], cfg.arm_mount[1], cfg.arm_mount[2])
                .inverse();
        let rec_stem = self.ledger.plant(plant).map(|r| r.stem);
        let Some(stem) = rec_stem else {
            return BTreeMap::new();
        };
        let placement_pose = self
            .link
            .host
            .world()
            .plants
            .iter()
            .find(|p| p.id == plant)
            .map(|p| p.base_pose)
            .expect("ledger plants exist in the world");
        let mut seen = BTreeMap::new();
        for d in &cap.detections {
            let in_chassis = cap.chassis_from_optical.apply(&d.centroid_camera);
            let world_pos = world_from_chassis.apply(&in_chassis);
            let stem_distance = (world_pos.x - stem.x).hypot(world_pos.y - stem.y);
            if stem_distance > self.cfg.plant_radius {
                continue;
            }
            let nearest_other = self
                .ledger
                .plants
                .iter()
                .filter(|p| p.id != plant)
                .map(|p| (world_pos.x - p.stem.x).hypot(world_pos.y - p.stem.y))
                .fold(f64::INFINITY, f64::min);
            if nearest_other < stem_distance {
                continue;
            }
            let arm_pos = arm_from_chassis.apply(&in_chassis);
            let rec = self.ledger.plant_mut(plant).expect("checked above");
            let matched = rec
                .parts
                .iter()
                .enumerate()
                .filter(|(i, p)| p.kind == d.kind && !seen.contains_key(i))
                .map(|(i, p)| (i, (p.position - world_pos).norm()))
                .filter(|(_, dist)| *dist <= self.cfg.association_radius)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let idx = match matched {
                Some((i, _)) => {
                    let p = &mut rec.parts[i];
                    let n = p.sightings as f64;
                    p.position = (p.position * n + world_pos) / (n + 1.0);
                    p.sightings += 1;
                    p.stem_distance = (p.position.x - stem.x).hypot(p.position.y - stem.y);
                    i
                }
                None => {
                    let local = placement_pose.inverse_transform_point((world_pos.x, world_pos.y));
                    let id = rec.next_part_id(d.kind);
                    rec.parts.push(PartRecord {
                        id,
                        kind: d.kind,
                        position: world_pos,
                        sightings: 1,
                        stem_distance,
                        near_half: local.0 < 0.0,
                        detected: true,
                        targeted: false,
                        trimmed: false,
                        attempts: 0,
                        skipped: false,
                    });
                    rec.parts.len() - 1
                }
            };
            seen.insert(idx, arm_pos);
        }
        seen
    }

    fn process(&mut self, plant: &str, side: Side) -> Result<VisitStatus, BehaviorError> {
        let rec = self
            .ledger
            .plant(plant)
            .expect("plant came from the ledger")
            .clone();
        let pose = match side {
            Side::Near => rec.near_pose,
            Side::Far => rec.far_pose,
        };
        let world = self.link.host.world();
        let est = self.loc.estimate().pose;
        if let Err(e) = check_segment(
            &est,
            &pose,
            &world.plants,
            &world.arena().bounds,
            world.config(),
        ) {
            self.link.events.push(MissionEvent::Anomaly {
                message: format!("{plant} {side:?}: {e}"),
            });
            return Ok(VisitStatus::Failed);
        }
        let outcome = self.go(pose, &format!("{plant}/{side:?}").to_lowercase())?;
        if !outcome.arrived {
            self.link.events.push(MissionEvent::Anomaly {
                message: format!("{plant} {side:?}: navigation timed out"),
            });
            return Ok(VisitStatus::Failed);
        }

        let cap = self.capture("visit", Some(plant))?;
        let mut seen = self.associate(plant, &cap);
        let targets = self.choose_targets(plant, side, &seen);

        let mut pending: Vec<usize> = targets;
        for attempt in 0..self.cfg.max_trim_attempts {
            if pending.is_empty() {
                break;
            }
            for &i in &pending {
                let Some(target) = seen.get(&i).copied() else {
                    continue;
                };
                self.trim(plant, i, target)?;
            }
            self.home()?;
            let verify = self.capture("verify", Some(plant))?;
            seen = self.associate(plant, &verify);
            let rec = self.ledger.plant_mut(plant).expect("exists");
            let mut still = Vec::new();
            for &i in &pending {
                if !rec.parts[i].targeted {
                    continue;
                }
                if seen.contains_key(&i) {
                    still.push(i);
                } else {
                    rec.parts[i].trimmed = true;
                }
            }
            if !still.is_empty() && attempt + 1 < self.cfg.max_trim_attempts {
                self.link.events.push(MissionEvent::Anomaly {
                    message: format!("{plant}: retrying {} target(s)", still.len()),
                });
            }
            pending = still;
        }

        if side == Side::Near {
            let rec = self.ledger.plant_mut(plant).expect("exists");
            rec.flowers_remaining_near_side = rec
                .parts
                .iter()
                .filter(|p| p.kind == PartKind::Flower && p.near_half && !p.trimmed)
                .count() as u32;
        }
        Ok(VisitStatus::Done)
    }

    /// Ledger indices to trim on this visit.
    fn choose_targets(
        &mut self,
        plant: &str,
        side: Side,
        seen: &BTreeMap<usize, Vec3>,
    ) -> Vec<usize> {
        let rec = self.ledger.plant_mut(plant).expect("exists");
        let mut out: Vec<usize> = rec
            .parts
            .iter()
            .enumerate()
            .filter(|(i, p)| {
                p.kind == PartKind::Unhealthy
                    && !p.trimmed
                    && seen.contains_key(i)
                    && (side == Side::Far || p.near_half)
            })
            .map(|(i, _)| i)
            .collect();
        let flowers: Vec<(usize, FlowerCandidate)> = rec
            .parts
            .iter()
            .enumerate()
            .filter(|(i, p)| {
                p.kind == PartKind::Flower
                    && !p.trimmed
                    && !p.skipped
                    && match side {
                        Side::Near => p.near_half && seen.contains_key(i),
                        Side::Far => true,
                    }
            })
            .map(|(i, p)| {
                (
                    i,
                    FlowerCandidate {
                        id: p.id.clone(),
                        stem_distance: p.stem_distance,
                    },
                )
            })
            .collect();
        let remaining = rec.flowers_remaining_near_side;
        if side == Side::Far && remaining > 1 {
            self.link.events.push(MissionEvent::Anomaly {
                message: format!(
                    "{plant}: {remaining} flowers left on the near side, treating as 1"
                ),
            });
        }
        let candidates: Vec<FlowerCandidate> = flowers.iter().map(|(_, c)| c.clone()).collect();
        let plan = flower_trim_plan(side, &candidates, remaining);
        let rec = self.ledger.plant_mut(plant).expect("exists");
        for (i, c) in &flowers {
            if plan.skip.as_ref() == Some(&c.id) {
                rec.parts[*i].skipped = true;
            } else if plan.trim.contains(&c.id) && seen.contains_key(i) {
                out.push(*i);
            }
        }
        out.sort_by(|a, b| rec.parts[*a].id.cmp(&rec.parts[*b].id));
        out
    }

    fn obstacles(&self, plant: &str) -> ObstacleSet {
        let world = self.link.host.world();
        let cfg = world.config();
        let est = self.loc.estimate().pose;
        let arm_from_world = cfg.arm_base(&est).inverse();
        let stem = world
            .plants
            .iter()
            .find(|p| p.id == plant)
            .map(|p| p.stem.transformed(&arm_from_world));
        ObstacleSet {
            cuboids: vec![Cuboid {
                min: cfg.compute_block.min,
                max: cfg.compute_block.max,
            }],
            cylinders: stem.into_iter().collect(),
        }
    }

    fn trim(&mut self, plant: &str, idx: usize, target: Vec3) -> Result<(), BehaviorError> {
        let obstacles = self.obstacles(plant);
        let world = self.link.host.world();
        let cfg = world.config().clone();
        let q0 = world.robot.joints;
        let id = self.ledger.plant(plant).expect("exists").parts[idx]
            .id
            .clone();
        let plan: TrimPlan = match plan_trim(&cfg.arm, &target, &obstacles, &q0, &cfg.trim) {
            Ok(p) => p,
            Err(e) => {
                self.link.events.push(MissionEvent::Trim {
                    part: id,
                    status: "no_plan".into(),
                    detail: e.to_string(),
                });
                return Ok(());
            }
        };
        {
            let rec = self.ledger.plant_mut(plant).expect("exists");
            rec.parts[idx].targeted = true;
            rec.parts[idx].attempts += 1;
        }
        self.gripper(GripperState::Open)?;
        let [pre, grasp, retreat] = [
            plan.waypoints[0].q,
            plan.waypoints[1].q,
            plan.waypoints[2].q,
        ];
        let mut ok = self.move_arm(pre)? && self.move_arm(grasp)?;
        if ok {
            self.gripper(GripperState::Closed)?;
        }
        ok &= self.move_arm(retreat)?;
        self.gripper(GripperState::Open)?;
        self.link.events.push(MissionEvent::Trim {
            part: id,
            status: if ok { "executed" } else { "arm_timeout" }.into(),
            detail: format!("{:?}", plan.approach),
        });
        Ok(())
    }

    fn gripper(&mut self, state: GripperState) -> Result<(), BehaviorError> {
        if self.link.robot().gripper != state {
            let token = self.link.submit(Command::Gripper { state });
            self.link.wait(token, 0.5)?;
        }
        Ok(())
    }

    fn move_arm(&mut self, q: JointVector) -> Result<bool, BehaviorError> {
        let world = self.link.host.world();
        let cfg = world.config();
        let from = world.robot.joints;
        let seconds = (0..5)
            .map(|i| {
                (q.0[i] - from.0[i]).abs()
                    / (cfg.arm.joints[i].max_rate * self.cfg.servo_speed_fraction)
            })
            .fold(0.0, f64::max);
        let duration_ms = ((seconds * 1000.0).ceil() as u64).max(50);
        let frame = match radians_to_servo(&q, duration_ms) {
            Ok(f) => f,
            Err(e) => {
                self.link.events.push(MissionEvent::Anomaly {
                    message: format!("servo encoding: {e}"),
                });
                return Ok(false);
            }
        };
        let token = self.link.submit(Command::Servo(frame));
        Ok(self.link.wait(token, duration_ms as f64 / 1000.0 + 2.0)?)
    }

    fn home(&mut self) -> Result<(), BehaviorError> {
        let home = self.link.host.world().config().home;
        self.move_arm(home)?;
        Ok(())
    }
}

//! Straight-line pose navigation: a noisy absolute pose source fused with
//! wheel odometry, and a holonomic PID pose controller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drive::BodyTwist;
use crate::geometry::{normalize_angle, Pose2};
use crate::world::{integrate_twist, ActuationCommand, Plant, Rect, World};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("segment not clear: passes through the footprint of plant `{0}`")]
    SegmentNotClear(String),
    #[error("goal pose puts the chassis outside the arena bounds")]
    OutOfBounds,
    #[error("invalid goal: {0}")]
    InvalidGoal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    /// Per axis (x, y, theta).
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub kd: [f64; 3],
    /// Bound on each integral state.
    pub integral_clamp: [f64; 3],
    pub max_linear: f64,
    pub max_angular: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: [2.5, 2.5, 3.0],
            ki: [0.02, 0.02, 0.02],
            kd: [0.05, 0.05, 0.05],
            integral_clamp: [0.05, 0.05, 0.05],
            max_linear: 0.15,
            max_angular: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub enabled: bool,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            enabled: false,
            sigma_xy: 0.007,
            sigma_theta: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavigationConfig {
    pub gains: PidGains,
    pub noise: NoiseModel,
    /// Weight of each absolute fix against the odometry prediction.
    pub filter_gain: f64,
    pub position_tolerance: f64,
    pub heading_tolerance: f64,
    /// The controller settles to this fraction of the goal tolerances before
    /// declaring arrival, leaving the rest as margin for estimate error.
    pub settle_fraction: f64,
    pub timeout_base: f64,
    /// Extra seconds allowed per metre of travel.
    pub timeout_per_metre: f64,
    /// Extra seconds allowed per radian of turn.
    pub timeout_per_radian: f64,
}

impl Default for NavigationConfig {
    fn default() -> Self {
        Self {
            gains: PidGains::default(),
            noise: NoiseModel::default(),
            filter_gain: 0.02,
            position_tolerance: 0.02,
            heading_tolerance: 0.05,
            settle_fraction: 0.25,
            timeout_base: 8.0,
            timeout_per_metre: 10.0,
            timeout_per_radian: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavGoal {
    pub pose: Pose2,
    pub position_tolerance: f64,
    pub heading_tolerance: f64,
}

impl NavGoal {
    pub fn new(pose: Pose2, cfg: &NavigationConfig) -> Self {
        Self {
            pose,
            position_tolerance: cfg.position_tolerance,
            heading_tolerance: cfg.heading_tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose2,
    /// Diagonal covariance (m^2, m^2, rad^2).
    pub covariance: [f64; 3],
}

/// One noisy absolute fix around `truth`.
pub fn estimate_pose(truth: &Pose2, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> PoseEstimate {
    if !noise.enabled {
        return PoseEstimate {
            pose: *truth,
            covariance: [0.0; 3],
        };
    }
    let nxy = Normal::new(0.0, noise.sigma_xy).expect("finite sigma");
    let nth = Normal::new(0.0, noise.sigma_theta).expect("finite sigma");
    let (dx, dy, dth) = (nxy.sample(rng), nxy.sample(rng), nth.sample(rng));
    PoseEstimate {
        pose: Pose2::new(truth.x + dx, truth.y + dy, truth.theta + dth),
        covariance: [
            noise.sigma_xy * noise.sigma_xy,
            noise.sigma_xy * noise.sigma_xy,
            noise.sigma_theta * noise.sigma_theta,
        ],
    }
}

/// Complementary filter: odometry prediction blended with absolute fixes.
#[derive(Debug, Clone)]
pub struct Localizer {
    noise: NoiseModel,
    gain: f64,
    rng: ChaCha8Rng,
    estimate: Option<Pose2>,
}

impl Localizer {
    pub fn new(noise: NoiseModel, gain: f64, seed: u64) -> Self {
        Self {
            noise,
            gain,
            rng: ChaCha8Rng::seed_from_u64(seed),
            estimate: None,
        }
    }

    pub fn predict(&mut self, odometry: &BodyTwist, dt: f64) {
        if let Some(e) = &mut self.estimate {
            *e = integrate_twist(e, odometry, dt);
        }
    }

    pub fn correct(&mut self, truth: &Pose2) {
        let fix = estimate_pose(truth, &self.noise, &mut self.rng).pose;
        self.estimate = Some(match self.estimate {
            None => fix,
            Some(e) => {
                let a = if self.noise.enabled { self.gain } else { 1.0 };
                Pose2::new(
                    e.x + a * (fix.x - e.x),
                    e.y + a * (fix.y - e.y),
                    e.theta + a * normalize_angle(fix.theta - e.theta),
                )
            }
        });
    }

    pub fn estimate(&self) -> PoseEstimate {
        let var = |s: f64| {
            if self.noise.enabled {
                s * s * self.gain / (2.0 - self.gain)
            } else {
                0.0
            }
        };
        PoseEstimate {
            pose: self.estimate.expect("localizer has had at least one fix"),
            covariance: [
                var(self.noise.sigma_xy),
                var(self.noise.sigma_xy),
                var(self.noise.sigma_theta),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: [f64; 3],
    pub prev_error: Option<[f64; 3]>,
}

/// Goal error in the robot frame: (x, y, theta).
pub fn robot_frame_error(goal: &Pose2, est: &Pose2) -> [f64; 3] {
    let (s, c) = est.theta.sin_cos();
    let (dx, dy) = (goal.x - est.x, goal.y - est.y);
    [
        c * dx + s * dy,
        -s * dx + c * dy,
        normalize_angle(goal.theta - est.theta),
    ]
}

pub fn within_tolerance(goal: &NavGoal, est: &Pose2, fraction: f64) -> bool {
    est.distance_to(&goal.pose) <= goal.position_tolerance * fraction
        && normalize_angle(goal.pose.theta - est.theta).abs() <= goal.heading_tolerance * fraction
}

/// One controller update. Returns zero inside the settle region.
pub fn pid_step(
    goal: &NavGoal,
    est: &PoseEstimate,
    state: &mut PidState,
    gains: &PidGains,
    fraction: f64,
    dt: f64,
) -> BodyTwist {
    if within_tolerance(goal, &est.pose, fraction) {
        state.integral = [0.0; 3];
        state.prev_error = None;
        return BodyTwist::ZERO;
    }
    let e = robot_frame_error(&goal.pose, &est.pose);
    let deriv = match state.prev_error {
        Some(p) => std::array::from_fn(|i| {
            let d = if i == 2 {
                normalize_angle(e[i] - p[i])
            } else {
                e[i] - p[i]
            };
            d / dt
        }),
        None => [0.0; 3],
    };
    let raw = |integral: &[f64; 3]| -> [f64; 3] {
        std::array::from_fn(|i| {
            gains.kp[i] * e[i] + gains.ki[i] * integral[i] + gains.kd[i] * deriv[i]
        })
    };
    let unclamped = raw(&state.integral);
    let (out, saturated) = clamp_output(unclamped, gains);
    // Conditional integration: freeze an axis while the output is saturated
    // and its error would push further into saturation.
    for i in 0..3 {
        let pushing = saturated[i] && e[i].signum() == unclamped[i].signum();
        if !pushing {
            state.integral[i] = (state.integral[i] + e[i] * dt)
                .clamp(-gains.integral_clamp[i], gains.integral_clamp[i]);
        }
    }
    state.prev_error = Some(e);
    BodyTwist {
        vx: out[0],
        vy: out[1],
        omega: out[2],
    }
}

fn clamp_output(v: [f64; 3], gains: &PidGains) -> ([f64; 3], [bool; 3]) {
    let lin = v[0].hypot(v[1]);
    let mut out = v;
    let mut sat = [false; 3];
    if lin > gains.max_linear {
        out[0] *= gains.max_linear / lin;
        out[1] *= gains.max_linear / lin;
        sat[0] = true;
        sat[1] = true;
    }
    if v[2].abs() > gains.max_angular {
        out[2] = gains.max_angular.copysign(v[2]);
        sat[2] = true;
    }
    (out, sat)
}

/// Something that can be driven one fixed step at a time.
pub trait Drivable {
    fn dt(&self) -> f64;
    fn clock(&self) -> f64;
    /// Ground-truth pose; only the localizer's noise model reads it.
    fn true_pose(&self) -> Pose2;
    /// Applies `twist` for one step and returns the odometry twist.
    fn drive(&mut self, twist: BodyTwist) -> BodyTwist;
}

impl Drivable for World {
    fn dt(&self) -> f64 {
        self.config().dt
    }

    fn clock(&self) -> f64 {
        self.clock
    }

    fn true_pose(&self) -> Pose2 {
        self.robot.chassis
    }

    fn drive(&mut self, twist: BodyTwist) -> BodyTwist {
        let dt = self.config().dt;
        self.step(dt, &ActuationCommand::twist(twist)).applied_twist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavOutcome {
    pub arrived: bool,
    pub steps: u64,
    pub duration: f64,
    /// Straight-line distance from start to goal.
    pub distance: f64,
    pub position_error: f64,
    pub heading_error: f64,
    /// Largest ground-truth overshoot past the goal along the travel line.
    pub overshoot: f64,
}

impl NavOutcome {
    pub fn average_speed(&self) -> f64 {
        if self.duration > 0.0 {
            self.distance / self.duration
        } else {
            0.0
        }
    }
}

/// Distance from segment ab to point p in the plane.
fn segment_point_distance(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a.0 + t * dx - p.0).hypot(a.1 + t * dy - p.1)
}

/// Rejects goals whose straight segment sweeps the chassis through a plant
/// footprint, or that leave the arena.
pub fn check_segment(
    from: &Pose2,
    to: &Pose2,
    plants: &[Plant],
    bounds: &Rect,
    robot: &crate::world::RobotConfig,
) -> Result<(), NavError> {
    if !robot.fits(bounds, to) {
        return Err(NavError::OutOfBounds);
    }
    let clearance = (robot.chassis.length / 2.0).hypot(robot.chassis.width / 2.0);
    for p in plants {
        let d = segment_point_distance(
            (from.x, from.y),
            (to.x, to.y),
            (p.base_pose.x, p.base_pose.y),
        );
        if d < p.footprint_radius + clearance {
            return Err(NavError::SegmentNotClear(p.id.clone()));
        }
    }
    Ok(())
}

pub fn goal_timeout(from: &Pose2, goal: &Pose2, cfg: &NavigationConfig) -> f64 {
    cfg.timeout_base
        + cfg.timeout_per_metre * from.distance_to(goal)
        + cfg.timeout_per_radian * normalize_angle(goal.theta - from.theta).abs()
}

/// Closed-loop drive to `goal`. The caller is responsible for the segment
/// check; this only runs the loop.
pub fn navigate_to(
    plant: &mut impl Drivable,
    loc: &mut Localizer,
    goal: &NavGoal,
    cfg: &NavigationConfig,
) -> NavOutcome {
    navigate_with(plant, loc, goal, cfg, |_, _, _| {})
}

/// As [`navigate_to`], calling `observe(clock, estimate, command)` after
/// every step.
pub fn navigate_with(
    plant: &mut impl Drivable,
    loc: &mut Localizer,
    goal: &NavGoal,
    cfg: &NavigationConfig,
    mut observe: impl FnMut(f64, &PoseEstimate, &BodyTwist),
) -> NavOutcome {
    let dt = plant.dt();
    let start_truth = plant.true_pose();
    loc.correct(&start_truth);
    let start_est = loc.estimate().pose;
    let distance = start_est.distance_to(&goal.pose);
    let budget = goal_timeout(&start_est, &goal.pose, cfg);
    let t0 = plant.clock();
    let mut state = PidState::default();
    let mut steps = 0u64;
    let mut overshoot = 0.0f64;
    let dir = {
        let (dx, dy) = (goal.pose.x - start_truth.x, goal.pose.y - start_truth.y);
        let n = dx.hypot(dy);
        if n > 1e-9 {
            Some((dx / n, dy / n))
        } else {
            None
        }
    };
    let arrived = loop {
        let est = loc.estimate();
        if within_tolerance(goal, &est.pose, cfg.settle_fraction) {
            break true;
        }
        if plant.clock() - t0 >= budget {
            break false;
        }
        let cmd = pid_step(goal, &est, &mut state, &cfg.gains, cfg.settle_fraction, dt);
        let odo = plant.drive(cmd);
        steps += 1;
        loc.predict(&odo, dt);
        let truth = plant.true_pose();
        loc.correct(&truth);
        if let Some((ux, uy)) = dir {
            let past = (truth.x - goal.pose.x) * ux + (truth.y - goal.pose.y) * uy;
            overshoot = overshoot.max(past);
        }
        observe(plant.clock(), &loc.estimate(), &cmd);
    };
    let truth = plant.true_pose();
    NavOutcome {
        arrived,
        steps,
        duration: plant.clock() - t0,
        distance,
        position_error: truth.distance_to(&goal.pose),
        heading_error: normalize_angle(goal.pose.theta - truth.theta).abs(),
        overshoot,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{minimal_scenario, World};

    fn open_world() -> World {
        let mut doc = minimal_scenario();
        doc.arena.bed_a.clear();
        World::from_scenario(doc).unwrap()
    }

    #[test]
    fn noise_off_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Pose2::new(1.0, 2.0, 0.3);
        assert_eq!(estimate_pose(&t, &NoiseModel::default(), &mut rng).pose, t);
    }

    #[test]
    fn gaussian_fix_tail() {
        let noise = NoiseModel {
            enabled: true,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = Pose2::new(0.0, 0.0, 0.0);
        let within = (0..10_000)
            .filter(|_| estimate_pose(&t, &noise, &mut rng).pose.distance_to(&t) < 0.02)
            .count();
        // Rayleigh tail: P(r > 0.02) = exp(-(0.02/0.007)^2 / 2) ~ 1.7%.
        let expected = 1.0 - (-(0.02f64 / 0.007).powi(2) / 2.0).exp();
        assert!(within as f64 / 1e4 > expected - 0.005, "{within}");
        assert!(within >= 9_800);
    }

    #[test]
    fn fixes_are_seeded() {
        let noise = NoiseModel {
            enabled: true,
            ..Default::default()
        };
        let t = Pose2::new(0.5, 0.0, 0.0);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10)
                .map(|_| estimate_pose(&t, &noise, &mut rng).pose)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn zero_error_zero_twist() {
        let goal = NavGoal::new(Pose2::new(1.0, 0.0, 0.0), &NavigationConfig::default());
        let est = PoseEstimate {
            pose: goal.pose,
            covariance: [0.0; 3],
        };
        let t = pid_step(
            &goal,
            &est,
            &mut PidState::default(),
            &PidGains::default(),
            0.25,
            0.01,
        );
        assert_eq!(t, BodyTwist::ZERO);
    }

    #[test]
    fn large_error_saturates() {
        let gains = PidGains {
            kp: [0.5, 0.5, 1.5],
            ki: [0.0; 3],
            kd: [0.0; 3],
            ..Default::default()
        };
        let goal = NavGoal::new(Pose2::new(1.0, 0.0, 0.0), &NavigationConfig::default());
        let est = PoseEstimate {
            pose: Pose2::new(0.0, 0.0, 0.0),
            covariance: [0.0; 3],
        };
        let t = pid_step(&goal, &est, &mut PidState::default(), &gains, 0.25, 0.01);
        assert!((t.vx - 0.15).abs() < 1e-12);
        assert_eq!(t.vy, 0.0);
    }

    #[test]
    fn integral_is_bounded() {
        let gains = PidGains::default();
        let goal = NavGoal::new(Pose2::new(0.03, 0.0, 0.0), &NavigationConfig::default());
        let est = PoseEstimate {
            pose: Pose2::new(0.0, 0.0, 0.0),
            covariance: [0.0; 3],
        };
        let mut s = PidState::default();
        for _ in 0..100_000 {
            let t = pid_step(&goal, &est, &mut s, &gains, 0.25, 0.01);
            assert!(t.vx.hypot(t.vy) <= gains.max_linear + 1e-12);
        }
        assert!(s
            .integral
            .iter()
            .zip(gains.integral_clamp)
            .all(|(i, c)| i.abs() <= c));
    }

    #[test]
    fn current_pose_arrives_immediately() {
        let mut w = open_world();
        let cfg = NavigationConfig::default();
        let mut loc = Localizer::new(cfg.noise, cfg.filter_gain, 0);
        let goal = NavGoal::new(w.robot.chassis, &cfg);
        let out = navigate_to(&mut w, &mut loc, &goal, &cfg);
        assert!(out.arrived);
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn one_metre_ahead_within_twelve_seconds() {
        let mut w = open_world();
        w.robot.chassis = Pose2::new(0.5, 0.0, 0.0);
        let cfg = NavigationConfig::default();
        let mut loc = Localizer::new(cfg.noise, cfg.filter_gain, 0);
        let goal = NavGoal::new(Pose2::new(1.5, 0.0, 0.0), &cfg);
        let out = navigate_to(&mut w, &mut loc, &goal, &cfg);
        assert!(out.arrived);
        assert!(out.duration <= 12.0, "{}", out.duration);
        assert!(out.position_error <= 0.02);
        assert!(out.overshoot <= 0.02);
    }

    #[test]
    fn step_response_half_metre() {
        let mut w = open_world();
        w.robot.chassis = Pose2::new(1.0, 0.0, 0.0);
        let cfg = NavigationConfig::default();
        let mut loc = Localizer::new(cfg.noise, cfg.filter_gain, 0);
        let goal = NavGoal::new(Pose2::new(1.5, 0.0, 0.0), &cfg);
        let mut dists = Vec::new();
        let out = navigate_with(&mut w, &mut loc, &goal, &cfg, |t, e, _| {
            dists.push((t, e.pose.distance_to(&goal.pose)))
        });
        assert!(out.arrived);
        assert!(out.average_speed() >= 0.10, "{}", out.average_speed());
        assert!(out.overshoot <= 0.02);
        // Noise off: distance never grows after the first second.
        let late: Vec<f64> = dists
            .iter()
            .filter(|(t, _)| *t >= 1.0)
            .map(|(_, d)| *d)
            .collect();
        assert!(late.windows(2).all(|p| p[1] <= p[0] + 1e-12));
    }

    #[test]
    fn goal_behind_plant_rejected() {
        let w = World::from_scenario(minimal_scenario()).unwrap();
        let from = Pose2::new(0.5, 0.2, 0.0);
        let to = Pose2::new(1.0, 0.2, 0.0);
        let through = Pose2::new(1.0, 0.45, 0.0);
        let cfg = w.config();
        assert!(check_segment(&from, &to, &w.plants, &w.arena().bounds, cfg).is_ok());
        let mut plants = w.plants.clone();
        plants[0].base_pose.y = 0.35;
        assert_eq!(
            check_segment(&from, &to, &plants, &w.arena().bounds, cfg),
            Err(NavError::SegmentNotClear("A1".into()))
        );
        assert_eq!(
            check_segment(&from, &through, &w.plants, &w.arena().bounds, cfg),
            Err(NavError::OutOfBounds)
        );
    }
}

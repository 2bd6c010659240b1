//! Labeled synthetic frames for measuring perception offline.

use std::f64::consts::PI;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trace::CaptureLabel;
use crate::geometry::{Pose2, Pose3};
use crate::perception::{detect_parts, PerceptionConfig};
use crate::sensor::{
    camera_pose, render_with, CameraMount, MountState, Ownership, RenderOptions, RgbdFrame,
};
use crate::world::{default_scenario, part_color, DistractorSpec, PartKind, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub frames: usize,
    pub seed: u64,
    pub depth_noise_sigma: f64,
    /// Uniform jitter applied to the approach pose (m, rad).
    pub jitter_xy: f64,
    pub jitter_yaw: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            frames: 200,
            seed: 1,
            depth_noise_sigma: 0.002,
            jitter_xy: 0.05,
            jitter_yaw: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub scenario_seed: u64,
    pub plant: String,
    pub near: bool,
    pub chassis: Pose2,
    pub actuator_extension: f64,
    pub camera: Pose3,
}

#[derive(Debug, Clone)]
pub struct CorpusSample {
    pub index: usize,
    pub view: Viewpoint,
    pub frame: RgbdFrame,
    pub ownership: Ownership,
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn render_view(
    world: &World,
    chassis: Pose2,
    extension: f64,
    sigma: f64,
    noise_seed: u64,
) -> (Pose3, RgbdFrame, Ownership) {
    let mut robot = world.robot;
    robot.chassis = chassis;
    robot.actuator_extension = extension;
    let cfg = world.config();
    let cam = camera_pose(
        &robot,
        &MountState::of(&robot, CameraMount::RearActuator),
        cfg,
    );
    let opts = RenderOptions {
        depth_noise_sigma: sigma,
        noise_seed,
    };
    let (frame, own) = render_with(world, &cam, &cfg.intrinsics, &opts);
    (cam, frame, own)
}

/// Frames of random default-layout plants from jittered approach poses.
pub fn generate_corpus(opts: &CorpusOptions) -> Vec<CorpusSample> {
    (0..opts.frames)
        .into_par_iter()
        .map(|index| {
            let mut rng = sample_rng(opts.seed, index);
            let scenario_seed = rng.random();
            let world = World::from_scenario(default_scenario(scenario_seed))
                .expect("default scenario is valid");
            let plant = &world.plants[rng.random_range(0..world.plants.len())];
            let near = rng.random_bool(0.5);
            let base = if near {
                plant.near_side
            } else {
                plant.far_side
            };
            let j = opts.jitter_xy;
            let chassis = Pose2::new(
                base.x + rng.random_range(-j..=j),
                base.y + rng.random_range(-j..=j),
                base.theta + rng.random_range(-opts.jitter_yaw..=opts.jitter_yaw),
            );
            let extension = rng.random_range(0.0..=world.config().actuator_stroke);
            let (camera, frame, ownership) = render_view(
                &world,
                chassis,
                extension,
                opts.depth_noise_sigma,
                rng.random(),
            );
            CorpusSample {
                index,
                view: Viewpoint {
                    scenario_seed,
                    plant: plant.id.clone(),
                    near,
                    chassis,
                    actuator_extension: extension,
                    camera,
                },
                frame,
                ownership,
            }
        })
        .collect()
}

/// Frames with no plants and `per_frame` colour-matched spheres in view.
pub fn generate_distractor_corpus(
    frames: usize,
    per_frame: usize,
    seed: u64,
    sigma: f64,
) -> Vec<CorpusSample> {
    (0..frames)
        .into_par_iter()
        .map(|index| {
            let mut rng = sample_rng(seed ^ 0xd15_7ac7, index);
            let mut doc = default_scenario(0);
            doc.arena.bed_a.clear();
            doc.arena.bed_b.clear();
            doc.plant_specs.clear();
            let chassis = Pose2::new(1.0, 0.2, PI / 2.0 + rng.random_range(-0.15..=0.15));
            let extension = rng.random_range(0.0..=doc.robot.actuator_stroke);
            let cam_height = doc.robot.rear_camera.base_height + extension;
            // Camera sits 0.12 m behind the chassis centre.
            let cx = chassis.x - 0.12 * chassis.theta.cos();
            let cy = chassis.y - 0.12 * chassis.theta.sin();
            // Each sphere stays fully inside the image and unoccluded, so every
            // one presents its whole curved face to the camera.
            let mut placed: Vec<([f64; 3], f64, f64, f64, f64)> = Vec::new();
            let mut tries = 0;
            while placed.len() < per_frame && tries < 1000 {
                tries += 1;
                let r: f64 = rng.random_range(0.04..=0.06);
                let range = rng.random_range(0.40..=0.80);
                let ang = (r / range).asin();
                let bearing: f64 = rng.random_range(-0.35..=0.35);
                let elevation: f64 = rng.random_range(-0.2..=0.2);
                if bearing.abs() + ang > 0.45 || elevation.abs() + ang > 0.34 {
                    continue;
                }
                let separated = placed.iter().all(|&(_, _, b, e, a)| {
                    let sep = ((bearing - b).powi(2) + (elevation - e).powi(2)).sqrt();
                    sep > ang + a + 0.02
                });
                let heading = chassis.theta + bearing;
                let flat = range * elevation.cos();
                let c = [
                    cx + flat * heading.cos(),
                    cy + flat * heading.sin(),
                    cam_height + range * elevation.sin(),
                ];
                if separated && c[2] - r > 0.0 {
                    placed.push((c, r, bearing, elevation, ang));
                }
            }
            doc.distractors = placed
                .iter()
                .enumerate()
                .map(|(i, (c, r, ..))| DistractorSpec {
                    id: format!("d{i}"),
                    center: *c,
                    radius: *r,
                    color: part_color(PartKind::ALL[rng.random_range(0..3)], &mut rng),
                })
                .collect();
            let world = World::from_scenario(doc).expect("distractor scene is valid");
            let (camera, frame, ownership) =
                render_view(&world, chassis, extension, sigma, rng.random());
            CorpusSample {
                index,
                view: Viewpoint {
                    scenario_seed: 0,
                    plant: String::new(),
                    near: true,
                    chassis,
                    actuator_extension: extension,
                    camera,
                },
                frame,
                ownership,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub frames: usize,
    pub seen: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub distractors_seen: usize,
    pub distractors_accepted: usize,
    pub spurious: usize,
}

impl CorpusMetrics {
    pub fn distractor_rejection(&self) -> f64 {
        if self.distractors_seen == 0 {
            1.0
        } else {
            1.0 - self.distractors_accepted as f64 / self.distractors_seen as f64
        }
    }
}

pub fn label_sample(sample: &CorpusSample, cfg: &PerceptionConfig) -> CaptureLabel {
    let result = detect_parts(&sample.frame, cfg);
    CaptureLabel::from_frame(
        &sample.frame,
        &sample.ownership,
        &result.detections,
        cfg.min_area,
    )
}

pub fn evaluate_corpus(samples: &[CorpusSample], cfg: &PerceptionConfig) -> CorpusMetrics {
    let labels: Vec<CaptureLabel> = samples.par_iter().map(|s| label_sample(s, cfg)).collect();
    let mut m = CorpusMetrics {
        frames: samples.len(),
        ..Default::default()
    };
    for l in &labels {
        m.seen += l.seen.len();
        m.correct += l.seen.iter().filter(|s| s.correct()).count();
        m.distractors_seen += l.distractors_seen;
        m.distractors_accepted += l.distractors_accepted;
        m.spurious += l.spurious;
    }
    m.accuracy = if m.seen == 0 {
        1.0
    } else {
        m.correct as f64 / m.seen as f64
    };
    m
}

#[derive(Serialize)]
struct LabelFile<'a> {
    index: usize,
    view: &'a Viewpoint,
    parts: Vec<PartPixels>,
}

#[derive(Serialize)]
struct PartPixels {
    part: String,
    kind: PartKind,
    pixels: usize,
}

/// Writes `frame_NNNN.ppm`, `frame_NNNN_depth.pgm` and `frame_NNNN.json`.
pub fn write_corpus(samples: &[CorpusSample], dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in samples {
        let stem = format!("frame_{:04}", s.index);
        std::fs::write(dir.join(format!("{stem}.ppm")), s.frame.to_ppm())?;
        std::fs::write(
            dir.join(format!("{stem}_depth.pgm")),
            s.frame.depth_to_pgm(),
        )?;
        let counts = s.ownership.pixel_counts();
        let parts = s
            .ownership
            .objects
            .iter()
            .zip(&counts)
            .filter_map(|(o, &n)| match o {
                crate::sensor::ObjectRef::Part { id, kind } if n > 0 => Some(PartPixels {
                    part: id.clone(),
                    kind: *kind,
                    pixels: n,
                }),
                _ => None,
            })
            .collect();
        let label = LabelFile {
            index: s.index,
            view: &s.view,
            parts,
        };
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_vec_pretty(&label).map_err(io::Error::other)?,
        )?;
    }
    Ok(())
}

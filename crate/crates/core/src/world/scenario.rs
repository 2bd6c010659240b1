//! Scenario documents: the JSON description of an arena, its plants and the
//! robot configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RobotConfig, WorldError};
use crate::behavior::MissionConfig;
use crate::geometry::Pose2;
use crate::perception::PerceptionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    Healthy,
    Unhealthy,
    Flower,
}

impl PartKind {
    pub const ALL: [PartKind; 3] = [PartKind::Healthy, PartKind::Unhealthy, PartKind::Flower];

    pub fn name(&self) -> &'static str {
        match self {
            PartKind::Healthy => "healthy",
            PartKind::Unhealthy => "unhealthy",
            PartKind::Flower => "flower",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x_min >= self.x_min
            && other.x_max <= self.x_max
            && other.y_min >= self.y_min
            && other.y_max <= self.y_max
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }
}

/// Where the robot parks to work on one plant: `along` metres either side of
/// the stem (in the bed's travel direction) and `standoff` metres out into
/// the hallway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApproachGeometry {
    pub along: f64,
    pub standoff: f64,
}

impl Default for ApproachGeometry {
    fn default() -> Self {
        Self {
            along: 0.10,
            standoff: 0.42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantPlacement {
    pub id: String,
    /// Stem base. The plant frame has +x along the bed's travel direction and
    /// +y pointing away from the hallway.
    pub pose: Pose2,
    pub spec: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near_side: Option<Pose2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far_side: Option<Pose2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArenaConfig {
    /// Hallway spans `x in [0, length]`, `y in [-width/2, width/2]`.
    pub hallway_length: f64,
    pub hallway_width: f64,
    /// Drivable region; the chassis footprint must stay inside.
    pub bounds: Rect,
    pub start_area: Rect,
    pub end_area: Rect,
    pub intersection: Pose2,
    pub far_end: Pose2,
    pub end_pose: Pose2,
    pub backdrop_color: [u8; 3],
    #[serde(default)]
    pub approach: ApproachGeometry,
    pub bed_a: Vec<PlantPlacement>,
    pub bed_b: Vec<PlantPlacement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSpec {
    pub id: String,
    pub kind: PartKind,
    /// Centre in the plant frame (m).
    pub offset: [f64; 3],
    pub radius: f64,
    /// Disc normal in the plant frame.
    pub normal: [f64; 3],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub id: String,
    pub stem_radius: f64,
    pub stem_height: f64,
    pub footprint_radius: f64,
    pub parts: Vec<PartSpec>,
}

/// A non-plant ball whose colour may match a plant band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorSpec {
    pub id: String,
    pub center: [f64; 3],
    pub radius: f64,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub arena: ArenaConfig,
    pub plant_specs: Vec<PlantSpec>,
    #[serde(default)]
    pub distractors: Vec<DistractorSpec>,
    #[serde(default)]
    pub robot: RobotConfig,
    #[serde(default)]
    pub perception: PerceptionConfig,
    #[serde(default)]
    pub mission: MissionConfig,
}

impl ScenarioDoc {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| WorldError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorldError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Sets the seed. A document without plant specs gets one generated per
    /// placement, in bed order, from the same seed.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        if self.plant_specs.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = PlantGenParams::default();
            let mut ids: Vec<String> = Vec::new();
            for (_, p) in self.placements() {
                if !ids.contains(&p.spec) {
                    ids.push(p.spec.clone());
                }
            }
            self.plant_specs = ids
                .iter()
                .map(|id| generate_plant_spec(id, &params, &mut rng))
                .collect();
        }
        self
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn placements(&self) -> impl Iterator<Item = (Bed, &PlantPlacement)> {
        self.arena
            .bed_a
            .iter()
            .map(|p| (Bed::A, p))
            .chain(self.arena.bed_b.iter().map(|p| (Bed::B, p)))
    }

    pub fn spec_map(&self) -> Result<BTreeMap<&str, &PlantSpec>, WorldError> {
        let mut map = BTreeMap::new();
        for s in &self.plant_specs {
            if map.insert(s.id.as_str(), s).is_some() {
                return Err(WorldError::Invalid(format!(
                    "duplicate plant spec id `{}`",
                    s.id
                )));
            }
        }
        Ok(map)
    }

    /// Checks for duplicate ids across plants and parts.
    pub(crate) fn check_ids(&self) -> Result<(), WorldError> {
        let mut seen = BTreeSet::new();
        for (_, p) in self.placements() {
            if !seen.insert(p.id.clone()) {
                return Err(WorldError::Invalid(format!(
                    "duplicate plant id `{}`",
                    p.id
                )));
            }
        }
        for s in &self.plant_specs {
            let mut parts = BTreeSet::new();
            for part in &s.parts {
                if !parts.insert(&part.id) {
                    return Err(WorldError::Invalid(format!(
                        "duplicate part id `{}` in spec `{}`",
                        part.id, s.id
                    )));
                }
            }
        }
        for d in &self.distractors {
            if !seen.insert(format!("distractor:{}", d.id)) {
                return Err(WorldError::Invalid(format!(
                    "duplicate distractor id `{}`",
                    d.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bed {
    A,
    B,
}

pub const HEALTHY_BASE: [u8; 3] = [46, 150, 58];
pub const UNHEALTHY_BASE: [u8; 3] = [214, 196, 44];
pub const FLOWER_BASE: [u8; 3] = [246, 244, 238];

/// Colour for a part of `kind`, jittered a little per part.
pub fn part_color(kind: PartKind, rng: &mut impl Rng) -> [u8; 3] {
    let base = match kind {
        PartKind::Healthy => HEALTHY_BASE,
        PartKind::Unhealthy => UNHEALTHY_BASE,
        PartKind::Flower => FLOWER_BASE,
    };
    let spread: i32 = match kind {
        PartKind::Flower => 4,
        _ => 12,
    };
    let shift = rng.random_range(-spread..=spread);
    let mut out = base;
    for c in out.iter_mut() {
        *c = (*c as i32 + shift).clamp(0, 255) as u8;
    }
    out
}

/// Parameters of the random plant generator.
#[derive(Debug, Clone, Copy)]
pub struct PlantGenParams {
    pub healthy: (usize, usize),
    pub flowers: (usize, usize),
    pub unhealthy_per_half: usize,
    pub ring: (f64, f64),
    pub height: (f64, f64),
    pub part_radius: (f64, f64),
    pub min_spacing: f64,
}

impl Default for PlantGenParams {
    fn default() -> Self {
        Self {
            healthy: (2, 3),
            flowers: (1, 3),
            unhealthy_per_half: 1,
            ring: (0.055, 0.085),
            height: (0.15, 0.27),
            part_radius: (0.020, 0.026),
            min_spacing: 0.06,
        }
    }
}

/// Generates one plant spec in its own frame. Unhealthy clusters get one per
/// half and flowers are split between the near (x < 0) and far (x > 0)
/// halves, all on the hallway-facing side (y < 0). Healthy clusters go
/// anywhere.
pub fn generate_plant_spec(id: &str, params: &PlantGenParams, rng: &mut impl Rng) -> PlantSpec {
    let mut parts: Vec<PartSpec> = Vec::new();
    let n_healthy = rng.random_range(params.healthy.0..=params.healthy.1);
    let n_flowers = rng.random_range(params.flowers.0..=params.flowers.1);
    let mut wanted: Vec<(PartKind, Option<bool>)> = Vec::new();
    for half in [true, false] {
        for _ in 0..params.unhealthy_per_half {
            wanted.push((PartKind::Unhealthy, Some(half)));
        }
    }
    for i in 0..n_flowers {
        wanted.push((PartKind::Flower, Some(i % 2 == 0)));
    }
    for _ in 0..n_healthy {
        wanted.push((PartKind::Healthy, None));
    }

    let mut counters: BTreeMap<PartKind, usize> = BTreeMap::new();
    for (kind, near_half) in wanted {
        for _attempt in 0..500 {
            // Azimuth measured from plant +x; near half is x < 0.
            let az = match near_half {
                Some(true) => rng.random_range(190f64..255.0).to_radians(),
                Some(false) => rng.random_range(-75f64..-10.0).to_radians(),
                None => rng.random_range(0f64..360.0).to_radians(),
            };
            let rho = rng.random_range(params.ring.0..params.ring.1);
            let z = rng.random_range(params.height.0..params.height.1);
            let center = [rho * az.cos(), rho * az.sin(), z];
            if near_half.is_none() && center[0].abs() < 0.015 {
                continue;
            }
            let clash = parts.iter().any(|p| {
                let d = (0..3)
                    .map(|i| (p.offset[i] - center[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                d < params.min_spacing
            });
            if clash {
                continue;
            }
            let tilt = rng.random_range(0.3f64..0.8);
            let n = [az.cos(), az.sin(), tilt];
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            let idx = counters.entry(kind).or_insert(0);
            let prefix = match kind {
                PartKind::Healthy => "h",
                PartKind::Unhealthy => "u",
                PartKind::Flower => "f",
            };
            parts.push(PartSpec {
                id: format!("{prefix}{idx}"),
                kind,
                offset: center.map(|v| (v * 1e4).round() / 1e4),
                radius: (rng.random_range(params.part_radius.0..params.part_radius.1) * 1e4)
                    .round()
                    / 1e4,
                normal: n.map(|v| ((v / norm) * 1e4).round() / 1e4),
                color: part_color(kind, rng),
            });
            *idx += 1;
            break;
        }
    }
    PlantSpec {
        id: id.to_string(),
        stem_radius: 0.012,
        stem_height: 0.30,
        footprint_radius: 0.10,
        parts,
    }
}

/// The arena used by the shipped `default.json`: a 3 m x 0.8 m hallway with
/// three plants on each bed, 0.5 m apart.
pub fn default_arena() -> ArenaConfig {
    let bed = |label: &str, y: f64, theta: f64| -> Vec<PlantPlacement> {
        (0..3)
            .map(|i| PlantPlacement {
                id: format!("{label}{}", i + 1),
                pose: Pose2::new(1.0 + 0.5 * i as f64, y, theta),
                spec: format!("{label}{}", i + 1),
                near_side: None,
                far_side: None,
            })
            .collect()
    };
    ArenaConfig {
        hallway_length: 3.0,
        hallway_width: 0.8,
        bounds: Rect {
            x_min: -0.6,
            x_max: 3.4,
            y_min: -0.4,
            y_max: 0.4,
        },
        start_area: Rect {
            x_min: -0.6,
            x_max: -0.2,
            y_min: 0.0,
            y_max: 0.4,
        },
        end_area: Rect {
            x_min: -0.6,
            x_max: -0.2,
            y_min: -0.4,
            y_max: 0.0,
        },
        intersection: Pose2::new(0.0, 0.0, 0.0),
        far_end: Pose2::new(3.0, 0.0, 0.0),
        end_pose: Pose2::new(-0.4, -0.2, std::f64::consts::PI),
        backdrop_color: [104, 78, 52],
        approach: ApproachGeometry::default(),
        bed_a: bed("A", 0.52, 0.0),
        bed_b: bed("B", -0.52, std::f64::consts::PI),
    }
}

/// Builds the default two-bed scenario from a generator seed.
pub fn default_scenario(seed: u64) -> ScenarioDoc {
    ScenarioDoc {
        name: "default".into(),
        seed,
        arena: default_arena(),
        plant_specs: Vec::new(),
        distractors: Vec::new(),
        robot: RobotConfig::default(),
        perception: PerceptionConfig::default(),
        mission: MissionConfig::default(),
    }
    .seeded(seed)
}

/// One plant with a single unhealthy cluster, used by smoke tests.
pub fn minimal_scenario() -> ScenarioDoc {
    let mut arena = default_arena();
    arena.bed_a.truncate(1);
    arena.bed_b.clear();
    ScenarioDoc {
        name: "minimal".into(),
        seed: 0,
        arena,
        plant_specs: vec![PlantSpec {
            id: "A1".into(),
            stem_radius: 0.012,
            stem_height: 0.30,
            footprint_radius: 0.10,
            parts: vec![PartSpec {
                id: "u0".into(),
                kind: PartKind::Unhealthy,
                offset: [-0.06, -0.03, 0.2],
                radius: 0.024,
                normal: [-0.6, -0.6, 0.53],
                color: UNHEALTHY_BASE,
            }],
        }],
        distractors: Vec::new(),
        robot: RobotConfig::default(),
        perception: PerceptionConfig::default(),
        mission: MissionConfig::default(),
    }
}

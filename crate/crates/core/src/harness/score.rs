//! Scores a mission trace: detection accuracy, harvest success, localization and navigation speed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trace::{MissionEvent, TraceRecord};
use crate::behavior::PhaseStamp;
use crate::world::{PartKind, ScenarioDoc, TrimResult, World, WorldEvent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub detection_accuracy: f64,
    pub harvest_success: f64,
    /// Fraction of arrivals that must land within `localization_radius`.
    pub localization: f64,
    pub localization_radius: f64,
    /// m/s, averaged over segments at least `speed_min_segment` long.
    pub nav_speed: f64,
    pub speed_min_segment: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            detection_accuracy: 0.95,
            harvest_success: 0.90,
            localization: 1.0,
            localization_radius: 0.02,
            nav_speed: 0.10,
            speed_min_segment: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// Nothing to measure; `value` is reported as 1.0.
    pub vacuous: bool,
    pub threshold: f64,
    pub pass: bool,
}

impl Metric {
    fn ratio(name: &str, num: f64, den: f64, threshold: f64) -> Self {
        let vacuous = den == 0.0;
        let value = if vacuous { 1.0 } else { num / den };
        Self {
            name: name.into(),
            value,
            numerator: num,
            denominator: den,
            vacuous,
            threshold,
            pass: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KindCounts {
    pub total: usize,
    pub detected: usize,
    pub trimmed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantReport {
    pub id: String,
    pub healthy: KindCounts,
    pub unhealthy: KindCounts,
    pub flower: KindCounts,
    pub flowers_left: usize,
    pub fully_processed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalReport {
    pub label: String,
    pub arrived: bool,
    pub position_error: f64,
    pub heading_error: f64,
    pub distance: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub scenario: String,
    pub seed: u64,
    /// The trace ended without an end record.
    pub incomplete: bool,
    pub completed: bool,
    pub sim_duration: f64,
    /// Filled in by the caller; never part of the trace.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock: Option<f64>,
    pub plants: Vec<PlantReport>,
    pub healthy_damage: usize,
    pub trims: usize,
    pub misses: usize,
    pub anomalies: usize,
    /// Plants that finished both visits but kept a flower count other than 1.
    pub flower_policy_violations: Vec<String>,
    pub arrivals: Vec<ArrivalReport>,
    pub phases: Vec<PhaseStamp>,
    pub detection_accuracy: Metric,
    pub harvest_success: Metric,
    pub localization: Metric,
    pub nav_speed: Metric,
    pub pass: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("trace has no header record")]
    MissingHeader,
    #[error("embedded scenario: {0}")]
    Scenario(String),
}

/// Pure function of the records: identical traces give identical reports.
pub fn score(
    records: &[TraceRecord],
    thresholds: &Thresholds,
) -> Result<MissionReport, ScoreError> {
    let Some(TraceRecord::Header { scenario, .. }) = records.first() else {
        return Err(ScoreError::MissingHeader);
    };
    let scenario: &ScenarioDoc = scenario;
    let world =
        World::from_scenario(scenario.clone()).map_err(|e| ScoreError::Scenario(e.to_string()))?;

    let mut trimmed: BTreeMap<String, bool> =
        world.parts().map(|p| (p.id.clone(), false)).collect();
    let mut detected: BTreeMap<String, bool> = trimmed.clone();
    let (mut seen, mut correct) = (0usize, 0usize);
    let mut arrivals = Vec::new();
    let (mut trims, mut misses, mut anomalies) = (0, 0, 0);
    let mut last_t = 0.0;
    let mut end = None;
    for r in records {
        match r {
            TraceRecord::Header { .. } => {}
            TraceRecord::Step {
                t,
                world_events,
                events,
                ..
            } => {
                last_t = *t;
                for e in world_events {
                    if let WorldEvent::Grasp { part, result, .. } = e {
                        match (part, result) {
                            (Some(id), TrimResult::Success) => {
                                trims += 1;
                                trimmed.insert(id.clone(), true);
                            }
                            (_, TrimResult::Miss { .. }) => misses += 1,
                            _ => {}
                        }
                    }
                }
                for e in events {
                    match e {
                        MissionEvent::Capture { labels, .. } => {
                            for s in &labels.seen {
                                seen += 1;
                                if s.correct() {
                                    correct += 1;
                                    detected.insert(s.part.clone(), true);
                                }
                            }
                        }
                        MissionEvent::Nav { label, outcome, .. } => arrivals.push(ArrivalReport {
                            label: label.clone(),
                            arrived: outcome.arrived,
                            position_error: outcome.position_error,
                            heading_error: outcome.heading_error,
                            distance: outcome.distance,
                            duration: outcome.duration,
                        }),
                        MissionEvent::Anomaly { .. } => anomalies += 1,
                        _ => {}
                    }
                }
            }
            TraceRecord::End {
                t,
                completed,
                truth,
                phases,
                ledger,
            } => {
                last_t = *t;
                for p in &truth.parts {
                    trimmed.insert(p.id.clone(), p.trimmed);
                }
                end = Some((*completed, phases.clone(), ledger.clone()));
            }
        }
    }

    let mut plants = Vec::new();
    let mut healthy_damage = 0;
    let (mut targets, mut achieved) = (0usize, 0usize);
    let mut violations = Vec::new();
    for plant in &world.plants {
        let mut report = PlantReport {
            id: plant.id.clone(),
            healthy: KindCounts::default(),
            unhealthy: KindCounts::default(),
            flower: KindCounts::default(),
            flowers_left: 0,
            fully_processed: end
                .as_ref()
                .and_then(|(_, _, l)| l.plant(&plant.id))
                .is_some_and(|r| r.fully_processed()),
        };
        for part in &plant.parts {
            let c = match part.kind {
                PartKind::Healthy => &mut report.healthy,
                PartKind::Unhealthy => &mut report.unhealthy,
                PartKind::Flower => &mut report.flower,
            };
            c.total += 1;
            c.detected += usize::from(detected[&part.id]);
            c.trimmed += usize::from(trimmed[&part.id]);
        }
        report.flowers_left = report.flower.total - report.flower.trimmed;
        healthy_damage += report.healthy.trimmed;
        let flower_target = report.flower.total.saturating_sub(1);
        targets += report.unhealthy.total + flower_target;
        achieved += report.unhealthy.trimmed + report.flower.trimmed.min(flower_target);
        if report.fully_processed && report.flower.total > 0 && report.flowers_left != 1 {
            violations.push(plant.id.clone());
        }
        plants.push(report);
    }

    let within = arrivals
        .iter()
        .filter(|a| a.arrived && a.position_error <= thresholds.localization_radius)
        .count();
    let long: Vec<&ArrivalReport> = arrivals
        .iter()
        .filter(|a| a.distance >= thresholds.speed_min_segment)
        .collect();
    let (dist, time) = long
        .iter()
        .fold((0.0, 0.0), |(d, t), a| (d + a.distance, t + a.duration));
    let mut nav_speed = Metric::ratio("nav_speed", dist, time, thresholds.nav_speed);
    if long.is_empty() {
        nav_speed.denominator = 0.0;
    }

    let detection_accuracy = Metric::ratio(
        "detection_accuracy",
        correct as f64,
        seen as f64,
        thresholds.detection_accuracy,
    );
    let harvest_success = Metric::ratio(
        "harvest_success",
        achieved as f64,
        targets as f64,
        thresholds.harvest_success,
    );
    let localization = Metric::ratio(
        "localization",
        within as f64,
        arrivals.len() as f64,
        thresholds.localization,
    );
    let incomplete = end.is_none();
    let (completed, phases) = match &end {
        Some((c, p, _)) => (*c, p.clone()),
        None => (false, Vec::new()),
    };
    let pass = completed
        && violations.is_empty()
        && [
            &detection_accuracy,
            &harvest_success,
            &localization,
            &nav_speed,
        ]
        .iter()
        .all(|m| m.pass);
    Ok(MissionReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        incomplete,
        completed,
        sim_duration: last_t,
        wall_clock: None,
        plants,
        healthy_damage,
        trims,
        misses,
        anomalies,
        flower_policy_violations: violations,
        arrivals,
        phases,
        detection_accuracy,
        harvest_success,
        localization,
        nav_speed,
        pass,
    })
}

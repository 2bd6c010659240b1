//! Mission execution, trace scoring and corpus generation behind the CLI.

pub mod corpus;
pub mod score;
pub mod trace;

use std::io::Cursor;

pub use corpus::{
    evaluate_corpus, generate_corpus, generate_distractor_corpus, write_corpus, CorpusMetrics,
    CorpusOptions, CorpusSample,
};
pub use score::{score, Metric, MissionReport, ScoreError, Thresholds};
pub use trace::{hash_bytes, read_trace, CaptureLabel, MissionEvent, TraceRecord, TraceWriter};

use crate::behavior::{run_mission, BehaviorError, MissionRun};
use crate::world::{ScenarioDoc, World, WorldError};

pub const DEPTH_NOISE_SIGMA: f64 = 0.002;

/// Switches pose-fix noise and depth noise together.
pub fn set_noise(doc: &mut ScenarioDoc, on: bool) {
    doc.robot.navigation.noise.enabled = on;
    doc.perception.depth_noise_sigma = if on { DEPTH_NOISE_SIGMA } else { 0.0 };
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Mission(#[from] BehaviorError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Trace(#[from] trace::TraceReadError),
}

#[derive(Debug)]
pub struct RunOutput {
    pub run: MissionRun,
    pub report: MissionReport,
    pub trace: Vec<u8>,
}

/// Runs a mission in memory and scores its trace.
pub fn run_and_score(doc: ScenarioDoc, thresholds: &Thresholds) -> Result<RunOutput, HarnessError> {
    let world = World::from_scenario(doc)?;
    let mut trace = Vec::new();
    let run = run_mission(world, &mut trace)?;
    let records = read_trace(Cursor::new(&trace))?;
    let report = score(&records, thresholds)?;
    Ok(RunOutput { run, report, trace })
}

//! JSON-lines mission trace. One header, one record per sim step, one end
//! record. The hash covers every byte written, so two runs agree on the hash
//! exactly when their traces are identical.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{MissionPhase, PhaseStamp, PlantLedger, Side, VisitStatus};
use crate::bridge::Command;
use crate::geometry::Pose2;
use crate::navigation::NavOutcome;
use crate::perception::Detection;
use crate::sensor::{ObjectRef, Ownership, RgbdFrame};
use crate::world::{GroundTruth, PartKind, RobotState, ScenarioDoc, WorldEvent};

pub const TRACE_VERSION: u32 = 1;

/// A labeled part that covered enough pixels to count as seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeenPart {
    pub part: String,
    pub kind: PartKind,
    pub pixels: usize,
    /// Kind of the largest detection made mostly of this part's pixels.
    pub detected_as: Option<PartKind>,
}

impl SeenPart {
    pub fn correct(&self) -> bool {
        self.detected_as == Some(self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CaptureLabel {
    pub seen: Vec<SeenPart>,
    /// Detections whose pixels mostly belong to a distractor.
    pub distractors_accepted: usize,
    /// Distractors covering at least the minimum area.
    pub distractors_seen: usize,
    /// Detections mostly on the stem or the backdrop.
    pub spurious: usize,
}

impl CaptureLabel {
    /// Labels detections against the renderer's pixel ownership.
    pub fn from_frame(
        frame: &RgbdFrame,
        owner: &Ownership,
        detections: &[Detection],
        min_area: usize,
    ) -> Self {
        let _ = frame;
        let counts = owner.pixel_counts();
        let mut best: Vec<Option<(usize, PartKind)>> = vec![None; owner.objects.len()];
        let mut label = CaptureLabel::default();
        for d in detections {
            let mut tally = vec![0usize; owner.objects.len() + 1];
            for &i in &d.members {
                tally[owner.owner[i] as usize] += 1;
            }
            let (top, _) = tally
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(&a.0)))
                .expect("tally is non-empty");
            match top.checked_sub(1).map(|k| (k, &owner.objects[k])) {
                Some((k, ObjectRef::Part { .. })) => {
                    let area = d.contour.area;
                    if best[k].is_none_or(|(a, _)| area > a) {
                        best[k] = Some((area, d.kind));
                    }
                }
                Some((_, ObjectRef::Distractor { .. })) => label.distractors_accepted += 1,
                _ => label.spurious += 1,
            }
        }
        for (k, obj) in owner.objects.iter().enumerate() {
            if counts[k] < min_area {
                continue;
            }
            match obj {
                ObjectRef::Part { id, kind } => label.seen.push(SeenPart {
                    part: id.clone(),
                    kind: *kind,
                    pixels: counts[k],
                    detected_as: best[k].map(|(_, kind)| kind),
                }),
                ObjectRef::Distractor { .. } => label.distractors_seen += 1,
                ObjectRef::Stem { .. } => {}
            }
        }
        label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MissionEvent {
    Phase {
        from: MissionPhase,
        to: MissionPhase,
    },
    Nav {
        label: String,
        goal: Pose2,
        outcome: NavOutcome,
    },
    Capture {
        label: String,
        plant: Option<String>,
        detections: usize,
        rejected: usize,
        labels: CaptureLabel,
    },
    Discovered {
        plant: String,
    },
    Visit {
        plant: String,
        side: Side,
        status: VisitStatus,
    },
    Trim {
        part: String,
        status: String,
        detail: String,
    },
    Anomaly {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Header {
        version: u32,
        scenario: Box<ScenarioDoc>,
    },
    Step {
        tick: u64,
        t: f64,
        phase: MissionPhase,
        robot: RobotState,
        #[serde(default)]
        cmds: Vec<Command>,
        #[serde(default)]
        world_events: Vec<WorldEvent>,
        #[serde(default)]
        events: Vec<MissionEvent>,
    },
    End {
        t: f64,
        completed: bool,
        truth: GroundTruth,
        phases: Vec<PhaseStamp>,
        ledger: PlantLedger,
    },
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    r#type: &'static str,
    version: u32,
    scenario: &'a ScenarioDoc,
}

#[derive(Serialize)]
struct StepOut<'a> {
    r#type: &'static str,
    tick: u64,
    t: f64,
    phase: MissionPhase,
    robot: &'a RobotState,
    cmds: &'a [Command],
    world_events: &'a [WorldEvent],
    events: &'a [MissionEvent],
}

#[derive(Serialize)]
struct EndOut<'a> {
    r#type: &'static str,
    t: f64,
    completed: bool,
    truth: &'a GroundTruth,
    phases: &'a [PhaseStamp],
    ledger: &'a PlantLedger,
}

/// Streams records to `out` and hashes them on the way.
pub struct TraceWriter<'w> {
    out: &'w mut dyn Write,
    hasher: Sha256,
    records: u64,
    error: Option<io::Error>,
}

impl<'w> TraceWriter<'w> {
    pub fn new(out: &'w mut dyn Write) -> Self {
        Self {
            out,
            hasher: Sha256::new(),
            records: 0,
            error: None,
        }
    }

    fn line(&mut self, value: &impl Serialize) -> io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        let mut bytes = serde_json::to_vec(value).map_err(io::Error::other)?;
        bytes.push(b'\n');
        self.hasher.update(&bytes);
        self.out.write_all(&bytes)?;
        self.records += 1;
        Ok(())
    }

    pub fn header(&mut self, scenario: &ScenarioDoc) -> io::Result<()> {
        self.line(&HeaderOut {
            r#type: "header",
            version: TRACE_VERSION,
            scenario,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        tick: u64,
        t: f64,
        phase: MissionPhase,
        robot: &RobotState,
        cmds: &[Command],
        world_events: &[WorldEvent],
        events: &[MissionEvent],
    ) -> io::Result<()> {
        self.line(&StepOut {
            r#type: "step",
            tick,
            t,
            phase,
            robot,
            cmds,
            world_events,
            events,
        })
    }

    pub fn end(
        &mut self,
        truth: &GroundTruth,
        completed: bool,
        phases: &[PhaseStamp],
        ledger: &PlantLedger,
    ) -> io::Result<()> {
        self.line(&EndOut {
            r#type: "end",
            t: truth.clock,
            completed,
            truth,
            phases,
            ledger,
        })
    }

    /// Parks an error raised where it could not be returned.
    pub fn fail(&mut self, e: io::Error) {
        self.error.get_or_insert(e);
    }

    pub fn check(&mut self) -> io::Result<()> {
        match self.error.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Flushes and returns (hex SHA-256, record count).
    pub fn finish(mut self) -> io::Result<(String, u64)> {
        self.check()?;
        self.out.flush()?;
        Ok((hex::encode(self.hasher.finalize()), self.records))
    }
}

/// SHA-256 of a stored trace, matching [`TraceWriter::finish`].
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("trace io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Parses a trace. A trailing partial line (a run killed mid-write) is
/// dropped rather than reported.
pub fn read_trace(reader: impl BufRead) -> Result<Vec<TraceRecord>, TraceReadError> {
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last => break,
            Err(e) => {
                return Err(TraceReadError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

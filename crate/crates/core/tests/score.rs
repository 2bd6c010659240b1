use std::io::Cursor;

use strawbot::behavior::{MissionPhase, PlantLedger};
use strawbot::harness::trace::SeenPart;
use strawbot::harness::{
    read_trace, run_and_score, score, CaptureLabel, MissionEvent, Thresholds, TraceWriter,
};
use strawbot::world::{default_scenario, minimal_scenario, PartKind, World};

fn other_kind(k: PartKind) -> PartKind {
    match k {
        PartKind::Healthy => PartKind::Unhealthy,
        _ => PartKind::Healthy,
    }
}

/// Header, one capture step labelling `seen` parts with `wrong` of them
/// misclassified, then an end record.
fn hand_built_trace(seen: usize, wrong: usize) -> Vec<u8> {
    let doc = default_scenario(1);
    let world = World::from_scenario(doc.clone()).unwrap();
    let all: Vec<_> = world.parts().collect();
    let parts: Vec<SeenPart> = all
        .iter()
        .cycle()
        .take(seen)
        .enumerate()
        .map(|(i, p)| SeenPart {
            part: p.id.clone(),
            kind: p.kind,
            pixels: 400,
            detected_as: Some(if i < wrong {
                other_kind(p.kind)
            } else {
                p.kind
            }),
        })
        .collect();
    let capture = MissionEvent::Capture {
        label: "test".into(),
        plant: None,
        detections: seen,
        rejected: 0,
        labels: CaptureLabel {
            seen: parts,
            ..Default::default()
        },
    };
    let mut buf = Vec::new();
    let mut w = TraceWriter::new(&mut buf);
    w.header(&doc).unwrap();
    w.step(
        1,
        0.01,
        MissionPhase::GoToIntersection,
        &world.robot,
        &[],
        &[],
        &[capture],
    )
    .unwrap();
    w.end(
        &world.ground_truth(),
        true,
        &[],
        &PlantLedger::from_world(&world),
    )
    .unwrap();
    w.finish().unwrap();
    buf
}

#[test]
fn nineteen_of_twenty_is_exactly_the_threshold() {
    let records = read_trace(Cursor::new(hand_built_trace(20, 1))).unwrap();
    let r = score(&records, &Thresholds::default()).unwrap();
    assert_eq!(r.detection_accuracy.numerator, 19.0);
    assert_eq!(r.detection_accuracy.denominator, 20.0);
    assert_eq!(r.detection_accuracy.value, 0.95);
    assert!(r.detection_accuracy.pass);
    assert!(!r.incomplete);

    let records = read_trace(Cursor::new(hand_built_trace(20, 2))).unwrap();
    let r = score(&records, &Thresholds::default()).unwrap();
    assert_eq!(r.detection_accuracy.value, 0.9);
    assert!(!r.detection_accuracy.pass);
}

#[test]
fn truncated_trace_is_flagged_incomplete() {
    let full = hand_built_trace(20, 0);
    let text = String::from_utf8(full).unwrap();
    let end = text.trim_end().rfind('\n').unwrap();
    // Keep half of the end record to mimic a run killed mid-write.
    let cut = &text.as_bytes()[..end + (text.len() - end) / 2];
    let records = read_trace(Cursor::new(cut)).unwrap();
    assert_eq!(records.len(), 2);
    let r = score(&records, &Thresholds::default()).unwrap();
    assert!(r.incomplete);
    assert!(!r.completed);
    assert!(!r.pass);
    assert_eq!(r.detection_accuracy.denominator, 20.0);
}

#[test]
fn empty_trace_has_no_header() {
    assert!(score(&[], &Thresholds::default()).is_err());
}

#[test]
fn zero_plant_mission_reports_vacuous_ratios() {
    let mut doc = minimal_scenario();
    doc.arena.bed_a.clear();
    doc.plant_specs.clear();
    let out = run_and_score(doc, &Thresholds::default()).unwrap();
    let r = &out.report;
    assert!(r.completed);
    for m in [&r.detection_accuracy, &r.harvest_success] {
        assert!(m.vacuous, "{}", m.name);
        assert_eq!(m.denominator, 0.0);
        assert_eq!(m.value, 1.0);
        assert!(m.pass);
    }
    assert!(r.plants.is_empty());
}

#[test]
fn rescoring_a_stored_trace_is_reproducible() {
    let out = run_and_score(minimal_scenario(), &Thresholds::default()).unwrap();
    let a = score(
        &read_trace(Cursor::new(&out.trace)).unwrap(),
        &Thresholds::default(),
    )
    .unwrap();
    let b = score(
        &read_trace(Cursor::new(&out.trace)).unwrap(),
        &Thresholds::default(),
    )
    .unwrap();
    assert_eq!(
        serde_json::to_vec(&a).unwrap(),
        serde_json::to_vec(&b).unwrap()
    );
    assert_eq!(a, out.report);
    assert!(a.pass);
    assert_eq!(a.harvest_success.value, 1.0);
    assert_eq!(a.healthy_damage, 0);
}

#[test]
fn thresholds_reject_unknown_keys() {
    let err = serde_json::from_str::<Thresholds>(r#"{"harvest": 0.5}"#);
    assert!(err.is_err());
    let t: Thresholds = serde_json::from_str(r#"{"harvest_success": 0.5}"#).unwrap();
    assert_eq!(t.harvest_success, 0.5);
    assert_eq!(
        t.detection_accuracy,
        Thresholds::default().detection_accuracy
    );
}

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use strawbot::arm::{
    forward_kinematics, inverse_kinematics, ArmModel, IkOptions, IkTarget, JointVector,
};
use strawbot::harness::{run_and_score, Thresholds};
use strawbot::perception::{detect_parts, fit_plane_ransac, PerceptionConfig, RansacParams};
use strawbot::sensor::render_with;
use strawbot::world::{minimal_scenario, World};
use strawbot_bench::{contaminated_plane, sample_frame};

fn perception(c: &mut Criterion) {
    let sample = sample_frame();
    let cfg = PerceptionConfig::default();
    c.bench_function("detect_parts", |b| {
        b.iter(|| detect_parts(black_box(&sample.frame), &cfg))
    });
    let points = contaminated_plane(500);
    let params = RansacParams::default();
    c.bench_function("fit_plane_ransac_500", |b| {
        b.iter(|| fit_plane_ransac(black_box(&points), &params))
    });
}

fn rendering(c: &mut Criterion) {
    let world = World::from_scenario(minimal_scenario()).unwrap();
    let sample = sample_frame();
    let k = world.config().intrinsics;
    c.bench_function("render_minimal", |b| {
        b.iter(|| {
            render_with(
                &world,
                black_box(&sample.view.camera),
                &k,
                &Default::default(),
            )
        })
    });
}

fn kinematics(c: &mut Criterion) {
    let model = ArmModel::default();
    let q = JointVector([0.3, -0.8, 1.1, 0.2, -0.4]);
    c.bench_function("forward_kinematics", |b| {
        b.iter(|| forward_kinematics(&model, black_box(&q)))
    });
    let target = IkTarget::position(forward_kinematics(&model, &q).unwrap().position);
    let seed = JointVector([0.0, -1.2, 1.4, 0.0, 0.0]);
    let opts = IkOptions::default();
    c.bench_function("inverse_kinematics", |b| {
        b.iter(|| inverse_kinematics(&model, black_box(&target), &seed, &opts))
    });
}

fn mission(c: &mut Criterion) {
    let mut g = c.benchmark_group("mission");
    g.sample_size(10);
    g.bench_function("minimal", |b| {
        b.iter(|| run_and_score(minimal_scenario(), &Thresholds::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, perception, rendering, kinematics, mission);
criterion_main!(benches);

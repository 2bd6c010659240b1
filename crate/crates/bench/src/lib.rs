//! Shared fixtures for the criterion benchmarks under `benches/`.

use strawbot::harness::{generate_corpus, CorpusOptions, CorpusSample};
use strawbot::Vec3;

/// One noisy near-side frame of a default plant.
pub fn sample_frame() -> CorpusSample {
    generate_corpus(&CorpusOptions {
        frames: 1,
        seed: 4,
        ..Default::default()
    })
    .remove(0)
}

/// A tilted planar patch with a third of its points scattered off the plane.
pub fn contaminated_plane(n: usize) -> Vec<Vec3> {
    let normal = Vec3::new(0.2, -0.3, 1.0).normalize();
    let u = normal.cross(&Vec3::x()).normalize();
    let v = normal.cross(&u);
    (0..n)
        .map(|i| {
            let a = (i as f64 * 0.618_034).fract() - 0.5;
            let b = (i as f64 * 0.414_214).fract() - 0.5;
            let p = Vec3::new(0.0, 0.0, 0.5) + u * (0.06 * a) + v * (0.06 * b);
            if i % 3 == 0 {
                p + normal * (0.05 * ((i as f64 * 0.732_051).fract() - 0.5))
            } else {
                p
            }
        })
        .collect()
}

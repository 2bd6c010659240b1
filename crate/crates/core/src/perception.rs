//! Colour-band segmentation, connected components, RANSAC planarity gate and
//! 3-D localisation of plant parts.

use std::collections::VecDeque;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::sensor::{back_project, optical_pose, RgbdFrame};
use crate::world::PartKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("invalid band for {kind:?}: {reason}")]
    Band { kind: PartKind, reason: String },
    #[error("bands for {a:?} and {b:?} overlap")]
    Overlap { a: PartKind, b: PartKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hsv {
    /// Degrees in [0, 360).
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Hexcone conversion. Achromatic pixels get hue 0.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    Hsv {
        h: if h >= 360.0 { h - 360.0 } else { h },
        s,
        v: max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvBand {
    pub kind: PartKind,
    /// Inclusive hue range in degrees; `h_lo > h_hi` wraps through 0.
    pub h_lo: f64,
    pub h_hi: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl HsvBand {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let bad = |reason: &str| PerceptionError::Band {
            kind: self.kind,
            reason: reason.into(),
        };
        if !(0.0..=360.0).contains(&self.h_lo) || !(0.0..=360.0).contains(&self.h_hi) {
            return Err(bad("hue bounds must lie in [0, 360]"));
        }
        for (lo, hi, name) in [
            (self.s_lo, self.s_hi, "saturation"),
            (self.v_lo, self.v_hi, "value"),
        ] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(bad(&format!("{name} bounds must be ordered within [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn hue_contains(&self, h: f64) -> bool {
        if self.h_lo <= self.h_hi {
            (self.h_lo..=self.h_hi).contains(&h)
        } else {
            h >= self.h_lo || h <= self.h_hi
        }
    }

    pub fn contains(&self, p: &Hsv) -> bool {
        self.hue_contains(p.h)
            && (self.s_lo..=self.s_hi).contains(&p.s)
            && (self.v_lo..=self.v_hi).contains(&p.v)
    }

    /// Non-wrapping pieces of the hue range.
    fn hue_intervals(&self) -> Vec<(f64, f64)> {
        if self.h_lo <= self.h_hi {
            vec![(self.h_lo, self.h_hi)]
        } else {
            vec![(self.h_lo, 360.0), (0.0, self.h_hi)]
        }
    }

    /// True when some HSV triple satisfies both bands.
    pub fn overlaps(&self, other: &HsvBand) -> bool {
        let meets = |a: (f64, f64), b: (f64, f64)| a.0 <= b.1 && b.0 <= a.1;
        let hue = self
            .hue_intervals()
            .iter()
            .any(|a| other.hue_intervals().iter().any(|b| meets(*a, *b)));
        hue && meets((self.s_lo, self.s_hi), (other.s_lo, other.s_hi))
            && meets((self.v_lo, self.v_hi), (other.v_lo, other.v_hi))
    }
}

pub fn default_bands() -> Vec<HsvBand> {
    vec![
        HsvBand {
            kind: PartKind::Healthy,
            h_lo: 90.0,
            h_hi: 150.0,
            s_lo: 0.25,
            s_hi: 1.0,
            v_lo: 0.15,
            v_hi: 1.0,
        },
        HsvBand {
            kind: PartKind::Unhealthy,
            h_lo: 40.0,
            h_hi: 70.0,
            s_lo: 0.25,
            s_hi: 1.0,
            v_lo: 0.15,
            v_hi: 1.0,
        },
        HsvBand {
            kind: PartKind::Flower,
            h_lo: 0.0,
            h_hi: 360.0,
            s_lo: 0.0,
            s_hi: 0.15,
            v_lo: 0.85,
            v_hi: 1.0,
        },
    ]
}

/// Checks each band and that no colour can fall in two bands.
pub fn validate_bands(bands: &[HsvBand]) -> Result<(), PerceptionError> {
    for b in bands {
        b.validate()?;
    }
    for (i, a) in bands.iter().enumerate() {
        for b in &bands[i + 1..] {
            if a.overlaps(b) {
                return Err(PerceptionError::Overlap {
                    a: a.kind,
                    b: b.kind,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub min_ratio: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 100,
            inlier_threshold: 0.005,
            min_inliers: 50,
            min_ratio: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub bands: Vec<HsvBand>,
    pub min_area: usize,
    pub ransac: RansacParams,
    /// Neighbouring pixels whose depths differ by more than this are not
    /// connected.
    pub depth_gate: f64,
    /// Points per contour handed to RANSAC (evenly strided subsample).
    pub max_points: usize,
    /// Depth noise used when a run enables noise.
    pub depth_noise_sigma: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            bands: default_bands(),
            min_area: 50,
            ransac: RansacParams::default(),
            depth_gate: 0.015,
            max_points: 500,
            depth_noise_sigma: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.data[v * self.width + u] = on;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

pub fn threshold(frame: &RgbdFrame, band: &HsvBand) -> Mask {
    Mask {
        width: frame.width(),
        height: frame.height(),
        data: frame
            .rgb
            .chunks_exact(3)
            .map(|p| band.contains(&rgb_to_hsv([p[0], p[1], p[2]])))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    /// Component pixels with at least one 4-neighbour outside it, raster order.
    pub boundary: Vec<(u32, u32)>,
    pub area: usize,
    pub centroid: (f64, f64),
}

/// A connected component with its member pixel indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub contour: Contour,
    pub members: Vec<usize>,
}

/// 8-connected components of `mask` with at least `min_area` pixels, largest
/// first, ties broken by the first pixel in (u, v) order.
pub fn extract_contours(mask: &Mask, min_area: usize) -> Vec<Contour> {
    components(mask, None, min_area)
        .into_iter()
        .map(|c| c.contour)
        .collect()
}

/// Like [`extract_contours`] but neighbours only join when their depths agree
/// within `gate`.
pub fn extract_components(
    mask: &Mask,
    depth: Option<(&[f32], f64)>,
    min_area: usize,
) -> Vec<Component> {
    components(mask, depth, min_area)
}

fn components(mask: &Mask, depth: Option<(&[f32], f64)>, min_area: usize) -> Vec<Component> {
    let (w, h) = (mask.width, mask.height);
    let mut label = vec![0u32; w * h];
    let mut found: Vec<(Component, (usize, usize))> = Vec::new();
    let mut queue = VecDeque::new();
    let joins = |a: usize, b: usize| match depth {
        None => true,
        Some((d, gate)) => {
            let (x, y) = (d[a], d[b]);
            (x > 0.0) == (y > 0.0) && ((x - y).abs() as f64) <= gate
        }
    };
    let mut next = 0u32;
    for start in 0..w * h {
        if !mask.data[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (u, v) = ((i % w) as i64, (i / w) as i64);
            for dv in -1..=1 {
                for du in -1..=1 {
                    let (nu, nv) = (u + du, v + dv);
                    if (du == 0 && dv == 0) || nu < 0 || nv < 0 || nu >= w as i64 || nv >= h as i64
                    {
                        continue;
                    }
                    let j = nv as usize * w + nu as usize;
                    if mask.data[j] && label[j] == 0 && joins(i, j) {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        if members.len() < min_area {
            continue;
        }
        members.sort_unstable();
        let (mut su, mut sv) = (0.0, 0.0);
        let mut first = (usize::MAX, usize::MAX);
        let mut boundary = Vec::new();
        for &i in &members {
            let (u, v) = (i % w, i / w);
            su += u as f64;
            sv += v as f64;
            first = first.min((u, v));
            let outside = |nu: i64, nv: i64| {
                nu < 0
                    || nv < 0
                    || nu >= w as i64
                    || nv >= h as i64
                    || label[nv as usize * w + nu as usize] != next
            };
            let (ui, vi) = (u as i64, v as i64);
            if outside(ui - 1, vi)
                || outside(ui + 1, vi)
                || outside(ui, vi - 1)
                || outside(ui, vi + 1)
            {
                boundary.push((u as u32, v as u32));
            }
        }
        let n = members.len() as f64;
        found.push((
            Component {
                contour: Contour {
                    boundary,
                    area: members.len(),
                    centroid: (su / n, sv / n),
                },
                members,
            },
            first,
        ));
    }
    found.sort_by(|a, b| b.0.contour.area.cmp(&a.0.contour.area).then(a.1.cmp(&b.1)));
    found.into_iter().map(|(c, _)| c).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    /// Unit normal; oriented towards the origin when the points are offset
    /// from it.
    pub normal: Vec3,
    /// Plane is `normal . p = offset`.
    pub offset: f64,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    #[serde(skip)]
    pub inliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlaneRejection {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("not planar: {} inliers, ratio {:.3}", .0.inlier_count, .0.inlier_ratio)]
    Gate(PlaneFit),
}

fn centroid(points: &[Vec3], idx: impl Iterator<Item = usize>) -> (Vec3, usize) {
    let mut sum = Vec3::zeros();
    let mut n = 0;
    for i in idx {
        sum += points[i];
        n += 1;
    }
    (sum / n.max(1) as f64, n)
}

/// Least-squares plane through `points[idx]`: eigenvector of the smallest
/// scatter eigenvalue, plus all eigenvalues ascending.
fn pca_plane(points: &[Vec3], idx: &[usize]) -> (Vec3, Vec3, [f64; 3]) {
    let (mean, _) = centroid(points, idx.iter().copied());
    let mut cov = Matrix3::zeros();
    for &i in idx {
        let d = points[i] - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n = eig.eigenvectors.column(order[0]).into_owned().normalize();
    (n, mean, order.map(|k| eig.eigenvalues[k]))
}

fn inliers_of(points: &[Vec3], n: &Vec3, offset: f64, thr: f64) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| (n.dot(&points[i]) - offset).abs() <= thr)
        .collect()
}

const REFINE_PASSES: usize = 3;

/// Seeded RANSAC plane fit with a least-squares refit of the consensus set.
pub fn fit_plane_ransac(
    points: &[Vec3],
    params: &RansacParams,
) -> Result<PlaneFit, PlaneRejection> {
    if points.len() < 3 {
        return Err(PlaneRejection::Degenerate(format!(
            "{} points",
            points.len()
        )));
    }
    let all: Vec<usize> = (0..points.len()).collect();
    let (_, mean, eig) = pca_plane(points, &all);
    let scale = points.iter().map(|p| (p - mean).norm()).fold(0.0, f64::max);
    if scale < 1e-12 || eig[1].max(0.0).sqrt() <= 1e-9 * scale * (points.len() as f64).sqrt() {
        return Err(PlaneRejection::Degenerate("points are collinear".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Vec3, f64)> = None;
    for _ in 0..params.iterations {
        let a = rng.random_range(0..points.len());
        let b = rng.random_range(0..points.len());
        let c = rng.random_range(0..points.len());
        if a == b || b == c || a == c {
            continue;
        }
        let cross = (points[b] - points[a]).cross(&(points[c] - points[a]));
        if cross.norm() <= 1e-12 * scale * scale {
            continue;
        }
        let n = cross.normalize();
        let offset = n.dot(&points[a]);
        let count = points
            .iter()
            .filter(|p| (n.dot(p) - offset).abs() <= params.inlier_threshold)
            .count();
        if best.is_none_or(|(bc, _, _)| count > bc) {
            best = Some((count, n, offset));
        }
    }
    let Some((_, n0, d0)) = best else {
        return Err(PlaneRejection::Degenerate(
            "no non-collinear sample found".into(),
        ));
    };

    let consensus = inliers_of(points, &n0, d0, params.inlier_threshold);
    let (mut n, mut mean_in, _) = pca_plane(points, &consensus);
    // Outliers that happen to sit inside the threshold band tilt the refit;
    // trim the consensus to a robust residual spread and fit again.
    let mut core = consensus.clone();
    for _ in 0..REFINE_PASSES {
        let mut residuals: Vec<f64> = core
            .iter()
            .map(|&i| (points[i] - mean_in).dot(&n).abs())
            .collect();
        let mid = residuals.len() / 2;
        let (_, mad, _) = residuals.select_nth_unstable_by(mid, f64::total_cmp);
        let band =
            (2.5 * 1.4826 * *mad).clamp(0.2 * params.inlier_threshold, params.inlier_threshold);
        let tighter: Vec<usize> = core
            .iter()
            .copied()
            .filter(|&i| (points[i] - mean_in).dot(&n).abs() <= band)
            .collect();
        if tighter.len() < 3 || tighter.len() == core.len() {
            break;
        }
        core = tighter;
        (n, mean_in, _) = pca_plane(points, &core);
    }
    let (mean_all, _) = centroid(points, 0..points.len());
    if n.dot(&mean_all) > 0.0 {
        n = -n;
    }
    let offset = n.dot(&mean_in);
    let mut inliers = inliers_of(points, &n, offset, params.inlier_threshold);
    if inliers.len() < consensus.len() {
        // The refit should only tighten the fit; keep the consensus set if not.
        inliers = consensus;
    }
    let fit = PlaneFit {
        normal: n,
        offset,
        inlier_count: inliers.len(),
        inlier_ratio: inliers.len() as f64 / points.len() as f64,
        inliers,
    };
    if fit.inlier_count >= params.min_inliers && fit.inlier_ratio >= params.min_ratio {
        Ok(fit)
    } else {
        Err(PlaneRejection::Gate(fit))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub kind: PartKind,
    pub contour: Contour,
    pub plane: PlaneFit,
    /// Mean of the inlier points in the optical frame.
    pub centroid_camera: Vec3,
    pub centroid_world: Vec3,
    #[serde(skip)]
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub kind: PartKind,
    pub area: usize,
    pub centroid: (f64, f64),
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerceptionResult {
    pub detections: Vec<Detection>,
    pub rejected: Vec<Rejected>,
}

fn contour_seed(base: u64, band: usize, c: &Contour) -> u64 {
    // Depends only on the contour's own geometry so results do not shift
    // when unrelated blobs appear or vanish.
    let mix = (band as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (c.area as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    base ^ mix
}

/// Full pipeline over one frame.
pub fn detect_parts(frame: &RgbdFrame, cfg: &PerceptionConfig) -> PerceptionResult {
    let hsv: Vec<Hsv> = frame
        .rgb
        .chunks_exact(3)
        .map(|p| rgb_to_hsv([p[0], p[1], p[2]]))
        .collect();
    let w = frame.width();
    let to_world = optical_pose(&frame.camera_pose);
    let per_band: Vec<PerceptionResult> = cfg
        .bands
        .par_iter()
        .enumerate()
        .map(|(bi, band)| {
            let mask = Mask {
                width: w,
                height: frame.height(),
                data: hsv.iter().map(|p| band.contains(p)).collect(),
            };
            let mut out = PerceptionResult::default();
            for comp in components(&mask, Some((&frame.depth, cfg.depth_gate)), cfg.min_area) {
                let valid: Vec<usize> = comp
                    .members
                    .iter()
                    .copied()
                    .filter(|&i| frame.depth[i] > 0.0)
                    .collect();
                let stride = valid.len().div_ceil(cfg.max_points.max(1)).max(1);
                let points: Vec<Vec3> = valid
                    .iter()
                    .step_by(stride)
                    .map(|&i| {
                        back_project(
                            (i % w) as f64,
                            (i / w) as f64,
                            frame.depth[i] as f64,
                            &frame.intrinsics,
                        )
                        .expect("filtered to valid depth")
                    })
                    .collect();
                let params = RansacParams {
                    seed: contour_seed(cfg.ransac.seed, bi, &comp.contour),
                    ..cfg.ransac
                };
                match fit_plane_ransac(&points, &params) {
                    Ok(plane) => {
                        let (c, _) = centroid(&points, plane.inliers.iter().copied());
                        out.detections.push(Detection {
                            kind: band.kind,
                            centroid_world: to_world.apply(&c),
                            centroid_camera: c,
                            contour: comp.contour,
                            plane,
                            members: comp.members,
                        });
                    }
                    Err(e) => out.rejected.push(Rejected {
                        kind: band.kind,
                        area: comp.contour.area,
                        centroid: comp.contour.centroid,
                        reason: e.to_string(),
                    }),
                }
            }
            out
        })
        .collect();
    let mut result = PerceptionResult::default();
    for r in per_band {
        result.detections.extend(r.detections);
        result.rejected.extend(r.rejected);
    }
    result
}

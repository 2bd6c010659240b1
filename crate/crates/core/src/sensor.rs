//! Synthetic RGBD camera. Frames are ray cast against plant discs, stems and
//! distractor balls; a parallel ownership buffer records which object each
//! pixel shows, which is what the labelled corpus is built from.

use nalgebra::{Matrix3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose3, Transform, Vec3};
use crate::world::{PartKind, RobotConfig, RobotState, World};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("no depth return at pixel ({u}, {v})")]
    NoDepth { u: f64, v: f64 },
    #[error("image format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            fx: 600.0,
            fy: 600.0,
            cx: 320.0,
            cy: 240.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), SensorError> {
        if self.width == 0 || self.height == 0 {
            return Err(SensorError::Intrinsics("image must be non-empty".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SensorError::Intrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(SensorError::Intrinsics(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    /// Pinhole projection of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.cx + self.fx * p.x / p.z, self.cy + self.fy * p.y / p.z))
    }
}

/// Camera-frame point (z forward, x right, y down) behind pixel `(u, v)`.
pub fn back_project(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<Vec3, SensorError> {
    if !crate::geometry::positive(depth) {
        return Err(SensorError::NoDepth { u, v });
    }
    Ok(Vec3::new(
        (u - k.cx) * depth / k.fx,
        (v - k.cy) * depth / k.fy,
        depth,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMountConfig {
    /// Mount position in the chassis frame (x, y).
    pub offset: [f64; 2],
    /// Height of the optical centre above the floor with the actuator retracted.
    pub base_height: f64,
    /// Downward tilt (rad).
    pub pitch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMount {
    FrontFixed,
    RearActuator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountState {
    pub mount: CameraMount,
    pub actuator_extension: f64,
}

impl MountState {
    pub fn of(robot: &RobotState, mount: CameraMount) -> Self {
        Self {
            mount,
            actuator_extension: robot.actuator_extension,
        }
    }
}

/// World pose of the camera body (x forward, y left, z up). Only the rear
/// camera rides on the actuator.
pub fn camera_pose(robot: &RobotState, mount: &MountState, cfg: &RobotConfig) -> Pose3 {
    let (m, lift) = match mount.mount {
        CameraMount::FrontFixed => (&cfg.front_camera, 0.0),
        CameraMount::RearActuator => (
            &cfg.rear_camera,
            mount.actuator_extension.clamp(0.0, cfg.actuator_stroke),
        ),
    };
    let local = Transform::from_translation(m.offset[0], m.offset[1], m.base_height + lift)
        .compose(&Transform::rot_y(m.pitch));
    Pose3::from_transform(&robot.chassis.to_transform(0.0).compose(&local))
}

/// Body frame to optical frame: optical z is body x, optical x is body -y,
/// optical y is body -z.
pub fn optical_from_body() -> Transform {
    let m = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    Transform::from_matrix(m, Vec3::zeros()).expect("fixed rotation is orthonormal")
}

/// World transform of the optical frame for a camera body pose.
pub fn optical_pose(camera: &Pose3) -> Transform {
    camera.to_transform().compose(&optical_from_body())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectRef {
    Part { id: String, kind: PartKind },
    Distractor { id: String },
    Stem { plant: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbdFrame {
    pub intrinsics: CameraIntrinsics,
    /// Row-major RGB, 3 bytes per pixel.
    pub rgb: Vec<u8>,
    /// Row-major z-depth in metres, 0 where nothing was hit.
    pub depth: Vec<f32>,
    /// Camera body pose in the world.
    pub camera_pose: Pose3,
    pub timestamp: f64,
}

impl RgbdFrame {
    pub fn width(&self) -> usize {
        self.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height as usize
    }

    pub fn pixel(&self, u: usize, v: usize) -> [u8; 3] {
        let i = 3 * (v * self.width() + u);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f32 {
        self.depth[v * self.width() + u]
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    /// 16-bit PGM (P5), depth in whole millimetres, big-endian samples.
    pub fn depth_to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width(), self.height()).into_bytes();
        for d in &self.depth {
            let mm = (*d as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&mm.to_be_bytes());
        }
        out
    }
}

/// Parses a P6 image written by [`RgbdFrame::to_ppm`].
pub fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), SensorError> {
    let (w, h, max, body) = parse_header(bytes, b"P6")?;
    if max != 255 || body.len() != w * h * 3 {
        return Err(SensorError::Format("unexpected P6 payload".into()));
    }
    Ok((w, h, body.to_vec()))
}

/// Parses a 16-bit P5 image into millimetre samples.
pub fn parse_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), SensorError> {
    let (w, h, max, body) = parse_header(bytes, b"P5")?;
    if max != 65535 || body.len() != w * h * 2 {
        return Err(SensorError::Format("unexpected P5 payload".into()));
    }
    Ok((
        w,
        h,
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
    ))
}

fn parse_header<'a>(
    bytes: &'a [u8],
    magic: &[u8],
) -> Result<(usize, usize, usize, &'a [u8]), SensorError> {
    if !bytes.starts_with(magic) {
        return Err(SensorError::Format("bad magic".into()));
    }
    let mut fields = Vec::new();
    let mut i = magic.len();
    while fields.len() < 3 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let text = std::str::from_utf8(&bytes[start..i])
            .map_err(|e| SensorError::Format(e.to_string()))?;
        fields.push(
            text.parse::<usize>()
                .map_err(|e| SensorError::Format(e.to_string()))?,
        );
    }
    // Exactly one whitespace byte separates the header from the samples.
    Ok((
        fields[0],
        fields[1],
        fields[2],
        &bytes[(i + 1).min(bytes.len())..],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Standard deviation of additive depth noise (m); 0 disables it.
    pub depth_noise_sigma: f64,
    pub noise_seed: u64,
}

/// Per-pixel index into `objects`, offset by one; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct Ownership {
    pub objects: Vec<ObjectRef>,
    pub owner: Vec<u32>,
}

impl Ownership {
    pub fn object_at(&self, i: usize) -> Option<&ObjectRef> {
        match self.owner[i] {
            0 => None,
            k => Some(&self.objects[k as usize - 1]),
        }
    }

    /// Visible pixel count per object, indexed like `objects`.
    pub fn pixel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.objects.len()];
        for &o in &self.owner {
            if o > 0 {
                counts[o as usize - 1] += 1;
            }
        }
        counts
    }
}

pub const STEM_COLOR: [u8; 3] = [96, 66, 40];
const NEAR_CLIP: f64 = 0.02;

enum Shape {
    Disc {
        center: Vec3,
        normal: Vec3,
        radius: f64,
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Cylinder {
        base: Vec3,
        axis: Vec3,
        radius: f64,
        height: f64,
    },
}

impl Shape {
    fn bounds(&self) -> (Vec3, f64) {
        match self {
            Shape::Disc { center, radius, .. } => (*center, *radius),
            Shape::Sphere { center, radius } => (*center, *radius),
            Shape::Cylinder {
                base,
                axis,
                radius,
                height,
            } => (
                base + axis * (height / 2.0),
                (radius * radius + height * height / 4.0).sqrt(),
            ),
        }
    }

    /// Nearest hit along the ray `t * d` (origin at the camera) with its
    /// surface normal.
    fn intersect(&self, d: &Vec3) -> Option<(f64, Vec3)> {
        match self {
            Shape::Disc {
                center,
                normal,
                radius,
            } => {
                let denom = normal.dot(d);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(center) / denom;
                if t <= NEAR_CLIP || (d * t - center).norm_squared() > radius * radius {
                    return None;
                }
                Some((t, *normal))
            }
            Shape::Sphere { center, radius } => {
                let a = d.norm_squared();
                let b = d.dot(center);
                let c = center.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (b - disc.sqrt()) / a;
                if t <= NEAR_CLIP {
                    return None;
                }
                Some((t, (d * t - center) / *radius))
            }
            Shape::Cylinder {
                base,
                axis,
                radius,
                height,
            } => {
                let w = -base;
                let dp = d - axis * d.dot(axis);
                let wp = w - axis * w.dot(axis);
                let a = dp.norm_squared();
                let mut best: Option<(f64, Vec3)> = None;
                let mut consider = |t: f64, n: Vec3| {
                    if t > NEAR_CLIP && best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, n));
                    }
                };
                if a > 1e-14 {
                    let b = dp.dot(&wp);
                    let c = wp.norm_squared() - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        for t in [(-b - disc.sqrt()) / a, (-b + disc.sqrt()) / a] {
                            let h = (w + d * t).dot(axis);
                            if (0.0..=*height).contains(&h) {
                                consider(t, (wp + dp * t) / *radius);
                            }
                        }
                    }
                }
                let da = d.dot(axis);
                if da.abs() > 1e-12 {
                    for (h, n) in [(0.0, -axis), (*height, *axis)] {
                        let t = (h - w.dot(axis)) / da;
                        let p = w + d * t;
                        if (p - axis * p.dot(axis)).norm_squared() <= radius * radius {
                            consider(t, n);
                        }
                    }
                }
                best
            }
        }
    }
}

struct Renderable {
    shape: Shape,
    color: [u8; 3],
    object: ObjectRef,
}

fn scene(world: &World, to_optical: &Transform) -> Vec<Renderable> {
    let mut out = Vec::new();
    for plant in &world.plants {
        out.push(Renderable {
            shape: Shape::Cylinder {
                base: to_optical.apply(&plant.stem.base),
                axis: to_optical.apply_vector(&plant.stem.axis),
                radius: plant.stem.radius,
                height: plant.stem.height,
            },
            color: STEM_COLOR,
            object: ObjectRef::Stem {
                plant: plant.id.clone(),
            },
        });
        for part in plant.parts.iter().filter(|p| !p.trimmed) {
            out.push(Renderable {
                shape: Shape::Disc {
                    center: to_optical.apply(&part.center),
                    normal: to_optical.apply_vector(&part.surface_normal),
                    radius: part.radius,
                },
                color: part.color,
                object: ObjectRef::Part {
                    id: part.id.clone(),
                    kind: part.kind,
                },
            });
        }
    }
    for d in &world.distractors {
        out.push(Renderable {
            shape: Shape::Sphere {
                center: to_optical.apply(&d.center),
                radius: d.radius,
            },
            color: d.color,
            object: ObjectRef::Distractor { id: d.id.clone() },
        });
    }
    out
}

/// Pixel window that can contain the projection of a bounding sphere.
fn pixel_window(k: &CameraIntrinsics, c: &Vec3, r: f64) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (k.width as usize, k.height as usize);
    if c.z + r <= NEAR_CLIP {
        return None;
    }
    if c.z - r <= NEAR_CLIP {
        return Some((0, w - 1, 0, h - 1));
    }
    let xs = [
        (c.x - r) / (c.z - r),
        (c.x - r) / (c.z + r),
        (c.x + r) / (c.z - r),
        (c.x + r) / (c.z + r),
    ];
    let ys = [
        (c.y - r) / (c.z - r),
        (c.y - r) / (c.z + r),
        (c.y + r) / (c.z - r),
        (c.y + r) / (c.z + r),
    ];
    let fold = |v: &[f64; 4]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(*x), hi.max(*x))
            })
    };
    let (x0, x1) = fold(&xs);
    let (y0, y1) = fold(&ys);
    let u0 = (k.cx + k.fx * x0).floor().max(0.0);
    let u1 = (k.cx + k.fx * x1).ceil().min(w as f64 - 1.0);
    let v0 = (k.cy + k.fy * y0).floor().max(0.0);
    let v1 = (k.cy + k.fy * y1).ceil().min(h as f64 - 1.0);
    if u0 > u1 || v0 > v1 {
        return None;
    }
    Some((u0 as usize, u1 as usize, v0 as usize, v1 as usize))
}

fn shade(color: [u8; 3], normal: &Vec3, d: &Vec3) -> [u8; 3] {
    let cos = (normal.dot(d) / d.norm()).abs();
    let f = 0.92 + 0.08 * cos;
    color.map(|c| (c as f64 * f).round() as u8)
}

/// Renders the world from a camera body pose.
pub fn render(world: &World, camera: &Pose3, k: &CameraIntrinsics) -> RgbdFrame {
    render_with(world, camera, k, &RenderOptions::default()).0
}

/// Renders with options, also returning pixel ownership.
pub fn render_with(
    world: &World,
    camera: &Pose3,
    k: &CameraIntrinsics,
    opts: &RenderOptions,
) -> (RgbdFrame, Ownership) {
    let (w, h) = (k.width as usize, k.height as usize);
    let to_optical = optical_pose(camera).inverse();
    let objects = scene(world, &to_optical);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut owner = vec![0u32; w * h];
    let mut normals = vec![Vec3::zeros(); w * h];
    for (idx, obj) in objects.iter().enumerate() {
        let (c, r) = obj.shape.bounds();
        let Some((u0, u1, v0, v1)) = pixel_window(k, &c, r) else {
            continue;
        };
        for v in v0..=v1 {
            for u in u0..=u1 {
                let d = Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                if let Some((t, n)) = obj.shape.intersect(&d) {
                    let i = v * w + u;
                    if t < zbuf[i] {
                        zbuf[i] = t;
                        owner[i] = idx as u32 + 1;
                        normals[i] = n;
                    }
                }
            }
        }
    }

    let backdrop = world.arena().backdrop_color;
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut depth = vec![0f32; w * h];
    let noise = (opts.depth_noise_sigma > 0.0).then(|| {
        (
            ChaCha8Rng::seed_from_u64(opts.noise_seed),
            Normal::new(0.0, opts.depth_noise_sigma).expect("finite sigma"),
        )
    });
    let mut noise = noise;
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            match owner[i] {
                0 => rgb.extend_from_slice(&backdrop),
                o => {
                    let d = Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                    rgb.extend_from_slice(&shade(objects[o as usize - 1].color, &normals[i], &d));
                    let mut z = zbuf[i];
                    if let Some((rng, dist)) = noise.as_mut() {
                        z += dist.sample(rng);
                    }
                    depth[i] = z.max(0.0) as f32;
                }
            }
        }
    }
    let frame = RgbdFrame {
        intrinsics: *k,
        rgb,
        depth,
        camera_pose: *camera,
        timestamp: world.clock,
    };
    (
        frame,
        Ownership {
            objects: objects.into_iter().map(|o| o.object).collect(),
            owner,
        },
    )
}

/// Rotation that turns a camera body about z by `yaw` and tilts it down by
/// `pitch`.
pub fn look_rotation(yaw: f64, pitch: f64) -> UnitQuaternion<f64> {
    Transform::rot_z(yaw)
        .compose(&Transform::rot_y(pitch))
        .rotation
}

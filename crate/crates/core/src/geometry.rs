//! Rigid-body poses and frame transforms.
//!
//! Conventions: right-handed frames, z-up world, radians everywhere. Rotations
//! are stored as unit quaternions; matrices are accepted at construction and
//! re-orthonormalized.

use std::f64::consts::PI;

use nalgebra::{
    Isometry3, Matrix3, Matrix4, Rotation3, Translation3, Unit, UnitQuaternion, Vector3,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rotation matrix is not orthonormal with det +1 (deviation {0:.3e})")]
    NotARotation(f64),
    #[error("zero-length axis")]
    ZeroAxis,
}

/// False for NaN as well as for non-positive values.
pub fn positive(x: f64) -> bool {
    x > 0.0
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

/// Rigid transform: applies `rotation` then adds `translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vec3::new(x, y, z))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle),
            Vec3::zeros(),
        )
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), angle),
            Vec3::zeros(),
        )
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle),
            Vec3::zeros(),
        )
    }

    pub fn from_axis_angle(
        axis: Vec3,
        angle: f64,
        translation: Vec3,
    ) -> Result<Self, GeometryError> {
        let axis = Unit::try_new(axis, 1e-12).ok_or(GeometryError::ZeroAxis)?;
        Ok(Self::new(
            UnitQuaternion::from_axis_angle(&axis, angle),
            translation,
        ))
    }

    /// Builds a transform from a 3x3 rotation matrix. Matrices within 1e-6 of
    /// orthonormal are accepted and re-orthonormalized.
    pub fn from_matrix(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let deviation = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        let det = rotation.determinant();
        if deviation > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NotARotation(
                deviation.max((det - 1.0).abs()),
            ));
        }
        let rot = Rotation3::from_matrix_eps(&rotation, 1e-15, 100, Rotation3::identity());
        Ok(Self::new(
            UnitQuaternion::from_rotation_matrix(&rot),
            translation,
        ))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        self.isometry().to_homogeneous()
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    /// `self ∘ other`: the result applies `other` first, then `self`.
    pub fn compose(&self, other: &Transform) -> Transform {
        Transform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Transform {
        let inv = self.rotation.inverse();
        Transform {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotates a direction without translating it.
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }
}

pub fn compose(a: &Transform, b: &Transform) -> Transform {
    a.compose(b)
}

pub fn invert(t: &Transform) -> Transform {
    t.inverse()
}

pub fn apply(t: &Transform, p: &Vec3) -> Vec3 {
    t.apply(p)
}

/// A frame pose expressed in its parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose3 {
    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), UnitQuaternion::identity())
    }

    pub fn to_transform(&self) -> Transform {
        Transform::new(self.orientation, self.position)
    }

    pub fn from_transform(t: &Transform) -> Self {
        Self::new(t.translation, t.rotation)
    }
}

/// Planar chassis pose. `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawPose2")]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Deserialize)]
struct RawPose2 {
    x: f64,
    y: f64,
    theta: f64,
}

impl From<RawPose2> for Pose2 {
    fn from(raw: RawPose2) -> Self {
        Pose2::new(raw.x, raw.y, raw.theta)
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn normalized(self) -> Self {
        Self::new(self.x, self.y, self.theta)
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Signed heading difference `other - self`, wrapped.
    pub fn heading_error_to(&self, other: &Pose2) -> f64 {
        normalize_angle(other.theta - self.theta)
    }

    /// Lifts the pose to 3-D at height `z` (yaw about world z).
    pub fn to_transform(&self, z: f64) -> Transform {
        Transform::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.theta),
            Vec3::new(self.x, self.y, z),
        )
    }

    /// Maps a point given in this pose's frame into the parent frame (planar).
    pub fn transform_point(&self, local: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (
            self.x + c * local.0 - s * local.1,
            self.y + s * local.0 + c * local.1,
        )
    }

    /// Expresses a parent-frame point in this pose's frame (planar).
    pub fn inverse_transform_point(&self, world: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = world.0 - self.x;
        let dy = world.1 - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Plain 4x4 row-major product, kept independent of nalgebra.
    fn mat_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        out
    }

    fn rot_z_tx(angle: f64, t: [f64; 3]) -> [[f64; 4]; 4] {
        let (s, c) = angle.sin_cos();
        [
            [c, -s, 0.0, t[0]],
            [s, c, 0.0, t[1]],
            [0.0, 0.0, 1.0, t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    fn to_array(t: &Transform) -> [[f64; 4]; 4] {
        let m = t.to_homogeneous();
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        out
    }

    fn assert_transform_eq(a: &Transform, b: &Transform, tol: f64) {
        let ma = a.to_homogeneous();
        let mb = b.to_homogeneous();
        assert!((ma - mb).abs().max() <= tol, "{ma} vs {mb}");
    }

    fn arb_transform() -> impl Strategy<Value = Transform> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -PI..PI,
            prop::array::uniform3(-3.0f64..3.0),
        )
            .prop_filter("axis non-zero", |(a, _, _)| {
                (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt() > 1e-3
            })
            .prop_map(|(axis, angle, t)| {
                Transform::from_axis_angle(Vec3::from(axis), angle, Vec3::from(t)).unwrap()
            })
    }

    #[test]
    fn identity_compose_identity() {
        let id = Transform::identity();
        assert_transform_eq(&compose(&id, &id), &id, 0.0);
    }

    #[test]
    fn compose_hand_chained_rot_z() {
        let t = Transform::new(
            Transform::rot_z(PI / 2.0).rotation,
            Vec3::new(1.0, 0.0, 0.0),
        );
        let chained = mat_mul(
            &rot_z_tx(PI / 2.0, [1.0, 0.0, 0.0]),
            &rot_z_tx(PI / 2.0, [1.0, 0.0, 0.0]),
        );
        // Oracle result: rot z 180 deg, translation (1, 1, 0).
        assert_abs_diff_eq!(chained[0][3], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chained[1][3], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chained[0][0], -1.0, epsilon = 1e-12);
        let got = to_array(&compose(&t, &t));
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(got[i][j], chained[i][j], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn invert_pure_translation() {
        let t = Transform::from_translation(1.0, 2.0, 3.0);
        let inv = invert(&t);
        assert_abs_diff_eq!(
            inv.translation,
            Vec3::new(-1.0, -2.0, -3.0),
            epsilon = 1e-15
        );
        assert_transform_eq(&invert(&Transform::identity()), &Transform::identity(), 0.0);
    }

    #[test]
    fn apply_axis_rotation() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(apply(&Transform::identity(), &p), p);
        let q = apply(&Transform::rot_z(PI / 2.0), &Vec3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(q, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn from_matrix_rejects_shear() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.1;
        assert!(Transform::from_matrix(m, Vec3::zeros()).is_err());
        let r = Transform::rot_x(0.3).rotation_matrix();
        let t = Transform::from_matrix(r, Vec3::zeros()).unwrap();
        assert_abs_diff_eq!((t.rotation.norm() - 1.0).abs(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn angle_normalization_range() {
        assert_abs_diff_eq!(normalize_angle(PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(0.0), 0.0);
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!((left.to_homogeneous() - right.to_homogeneous()).abs().max() <= 1e-9);
        }

        #[test]
        fn inverse_round_trip(t in arb_transform()) {
            let id = t.compose(&t.inverse());
            prop_assert!((id.to_homogeneous() - Matrix4::identity()).abs().max() <= 1e-9);
        }

        #[test]
        fn apply_matches_homogeneous_multiply(t in arb_transform(), p in prop::array::uniform3(-5.0f64..5.0)) {
            let m = to_array(&t);
            let h = [p[0], p[1], p[2], 1.0];
            let oracle: Vec<f64> = (0..3).map(|i| (0..4).map(|k| m[i][k] * h[k]).sum()).collect();
            let got = t.apply(&Vec3::from(p));
            for i in 0..3 {
                prop_assert!((got[i] - oracle[i]).abs() <= 1e-9);
            }
        }

        #[test]
        fn apply_distributes_over_compose(a in arb_transform(), b in arb_transform(), p in prop::array::uniform3(-5.0f64..5.0)) {
            let p = Vec3::from(p);
            let lhs = a.compose(&b).apply(&p);
            let rhs = a.apply(&b.apply(&p));
            prop_assert!((lhs - rhs).abs().max() <= 1e-9);
        }

        #[test]
        fn quaternion_stays_unit(a in arb_transform(), b in arb_transform()) {
            prop_assert!((a.compose(&b).rotation.norm() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn theta_normalization_idempotent(theta in -100.0f64..100.0) {
            let once = normalize_angle(theta);
            prop_assert!(once > -PI && once <= PI);
            prop_assert_eq!(normalize_angle(once), once);
            let p = Pose2::new(0.0, 0.0, theta);
            prop_assert_eq!(p.normalized(), p);
        }
    }
}

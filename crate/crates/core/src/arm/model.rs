use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ArmError;
use crate::geometry::{positive, Vec3};

pub const JOINT_COUNT: usize = 5;

/// Rotation axis of a joint in its local frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointAxis {
    /// About local z.
    Yaw,
    /// About local y.
    Pitch,
    /// About local x (along the link).
    Roll,
}

impl JointAxis {
    pub fn unit(&self) -> Vec3 {
        match self {
            JointAxis::Yaw => Vec3::z(),
            JointAxis::Pitch => Vec3::y(),
            JointAxis::Roll => Vec3::x(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub servo: String,
    pub axis: JointAxis,
    pub lower: f64,
    pub upper: f64,
    /// rad/s
    pub max_rate: f64,
    /// Stall torque as listed for the servo; metadata only.
    pub torque: String,
}

/// Kinematic chain of the 5-DoF arm.
///
/// The chain is `J1 -> base_height (z) -> J2 -> upper_arm (x) -> J3 ->
/// forearm (x) -> J4 -> wrist_offset (x) -> J5 -> gripper (x)`. The zero
/// state is the fully extended straight configuration: every link along +x
/// of the arm base frame, tip at `(reach, 0, base_height)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmModel {
    pub joints: Vec<JointSpec>,
    pub base_height: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    /// Distance from J4 to J5 along the forearm axis.
    pub wrist_offset: f64,
    /// J5 to gripper tip, including the extended fork gripper.
    pub gripper: f64,
    pub gripper_reach_total: f64,
    /// Capsule radius used for every link during collision checks.
    pub link_radius: f64,
}

impl Default for ArmModel {
    fn default() -> Self {
        let joint = |name: &str, servo: &str, axis, torque: &str| JointSpec {
            name: name.into(),
            servo: servo.into(),
            axis,
            lower: -FRAC_PI_2,
            upper: FRAC_PI_2,
            max_rate: 2.0,
            torque: torque.into(),
        };
        Self {
            joints: vec![
                joint(
                    "j1",
                    "LX-15D",
                    JointAxis::Yaw,
                    "15 kg·cm @6V / 17 kg·cm @7.4V",
                ),
                joint("j2", "LX-225", JointAxis::Pitch, "25 kg·cm @7.4V"),
                joint(
                    "j3",
                    "LX-15D",
                    JointAxis::Pitch,
                    "15 kg·cm @6V / 17 kg·cm @7.4V",
                ),
                joint(
                    "j4",
                    "LX-15D",
                    JointAxis::Roll,
                    "15 kg·cm @6V / 17 kg·cm @7.4V",
                ),
                joint("j5", "ID 1", JointAxis::Yaw, "8 kg·cm @7.4V"),
            ],
            base_height: 0.10,
            upper_arm: 0.150,
            forearm: 0.150,
            wrist_offset: 0.0,
            gripper: 0.103,
            gripper_reach_total: 0.403,
            link_radius: 0.02,
        }
    }
}

impl ArmModel {
    pub fn validate(&self) -> Result<(), ArmError> {
        if self.joints.len() != JOINT_COUNT {
            return Err(ArmError::Model(format!(
                "expected {JOINT_COUNT} joints, got {}",
                self.joints.len()
            )));
        }
        for j in &self.joints {
            if !positive(j.upper - j.lower) || !positive(j.max_rate) {
                return Err(ArmError::Model(format!(
                    "joint {} has invalid limits or rate",
                    j.name
                )));
            }
        }
        let planar = self.upper_arm + self.forearm + self.wrist_offset + self.gripper;
        if (planar - self.gripper_reach_total).abs() > 1e-9 {
            return Err(ArmError::Model(format!(
                "planar link lengths sum to {planar:.4} m, expected {:.4} m",
                self.gripper_reach_total
            )));
        }
        if [self.base_height, self.upper_arm, self.forearm, self.gripper]
            .iter()
            .any(|l| !positive(*l))
            || self.wrist_offset < 0.0
            || self.link_radius < 0.0
        {
            return Err(ArmError::Model("link lengths must be positive".into()));
        }
        Ok(())
    }

    /// Translation applied after joint `i`.
    pub fn link_offset(&self, i: usize) -> Vec3 {
        match i {
            0 => Vec3::new(0.0, 0.0, self.base_height),
            1 => Vec3::new(self.upper_arm, 0.0, 0.0),
            2 => Vec3::new(self.forearm, 0.0, 0.0),
            3 => Vec3::new(self.wrist_offset, 0.0, 0.0),
            4 => Vec3::new(self.gripper, 0.0, 0.0),
            _ => unreachable!("joint index out of range"),
        }
    }

    /// The shoulder (J2) position, centre of the reachable sphere.
    pub fn shoulder(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.base_height)
    }

    pub fn limits(&self) -> [(f64, f64); JOINT_COUNT] {
        std::array::from_fn(|i| (self.joints[i].lower, self.joints[i].upper))
    }

    pub fn max_rates(&self) -> [f64; JOINT_COUNT] {
        std::array::from_fn(|i| self.joints[i].max_rate)
    }

    pub fn check_limits(&self, q: &JointVector) -> Result<(), ArmError> {
        for (i, (&v, j)) in q.0.iter().zip(&self.joints).enumerate() {
            if !v.is_finite() || v < j.lower - 1e-12 || v > j.upper + 1e-12 {
                return Err(ArmError::LimitViolation {
                    joint: i + 1,
                    value: v,
                    lower: j.lower,
                    upper: j.upper,
                });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &JointVector) -> JointVector {
        JointVector(std::array::from_fn(|i| {
            q.0[i].clamp(self.joints[i].lower, self.joints[i].upper)
        }))
    }
}

/// Arm configuration in radians, J1..J5.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub [f64; JOINT_COUNT]);

impl JointVector {
    pub const ZERO: JointVector = JointVector([0.0; JOINT_COUNT]);

    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn lerp(&self, other: &JointVector, t: f64) -> JointVector {
        JointVector(std::array::from_fn(|i| {
            self.0[i] + (other.0[i] - self.0[i]) * t
        }))
    }
}

impl fmt::Display for JointVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.4}")?;
        }
        write!(f, "]")
    }
}

//! Mecanum chassis kinematics: body twist <-> four wheel angular speeds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DriveError {
    #[error("mecanum geometry field `{0}` must be strictly positive")]
    NonPositive(&'static str),
}

/// Roller arrangement seen from above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RollerLayout {
    #[default]
    X,
    O,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MecanumGeometry {
    pub wheel_radius: f64,
    /// Half the wheelbase (front-back).
    pub half_length: f64,
    /// Half the track width (left-right).
    pub half_width: f64,
    pub layout: RollerLayout,
}

impl Default for MecanumGeometry {
    fn default() -> Self {
        Self {
            wheel_radius: 0.05,
            half_length: 0.149,
            half_width: 0.128,
            layout: RollerLayout::X,
        }
    }
}

impl MecanumGeometry {
    pub fn validate(&self) -> Result<(), DriveError> {
        for (name, v) in [
            ("wheel_radius", self.wheel_radius),
            ("half_length", self.half_length),
            ("half_width", self.half_width),
        ] {
            if !crate::geometry::positive(v) {
                return Err(DriveError::NonPositive(name));
            }
        }
        Ok(())
    }

    fn lever(&self) -> f64 {
        self.half_length + self.half_width
    }

    /// Sign applied to the lateral term; the O layout mirrors the rollers.
    fn strafe_sign(&self) -> f64 {
        match self.layout {
            RollerLayout::X => 1.0,
            RollerLayout::O => -1.0,
        }
    }
}

/// Body-frame twist: `vx` forward, `vy` left, `omega` counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyTwist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl BodyTwist {
    pub const ZERO: BodyTwist = BodyTwist {
        vx: 0.0,
        vy: 0.0,
        omega: 0.0,
    };

    pub fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.omega == 0.0
    }

    pub fn linear_speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// Scales the linear part down to `max_linear` (direction kept) and clips
    /// `omega` to `max_angular`. Returns the limited twist and whether any
    /// limit was hit.
    pub fn clamped(&self, max_linear: f64, max_angular: f64) -> (BodyTwist, bool) {
        let mut out = *self;
        let mut hit = false;
        let speed = self.linear_speed();
        if speed > max_linear {
            let k = max_linear / speed;
            out.vx *= k;
            out.vy *= k;
            hit = true;
        }
        if out.omega.abs() > max_angular {
            out.omega = max_angular.copysign(out.omega);
            hit = true;
        }
        (out, hit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelSpeeds {
    pub fl: f64,
    pub fr: f64,
    pub rl: f64,
    pub rr: f64,
}

impl WheelSpeeds {
    pub fn as_array(&self) -> [f64; 4] {
        [self.fl, self.fr, self.rl, self.rr]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|w| w.is_finite())
    }
}

pub fn twist_to_wheels(t: &BodyTwist, g: &MecanumGeometry) -> WheelSpeeds {
    let r = g.wheel_radius;
    let k = g.lever() * t.omega;
    let vy = g.strafe_sign() * t.vy;
    WheelSpeeds {
        fl: (t.vx - vy - k) / r,
        fr: (t.vx + vy + k) / r,
        rl: (t.vx + vy - k) / r,
        rr: (t.vx - vy + k) / r,
    }
}

/// Least-squares inverse of [`twist_to_wheels`]. The columns of the wheel
/// Jacobian are mutually orthogonal, so the normal equations are diagonal.
pub fn wheels_to_twist(w: &WheelSpeeds, g: &MecanumGeometry) -> BodyTwist {
    let r = g.wheel_radius;
    let vx = r * (w.fl + w.fr + w.rl + w.rr) / 4.0;
    let vy = g.strafe_sign() * r * (-w.fl + w.fr + w.rl - w.rr) / 4.0;
    let omega = r * (-w.fl + w.fr - w.rl + w.rr) / (4.0 * g.lever());
    BodyTwist { vx, vy, omega }
}

//! Integer wire encoding of joint angles: `[-pi/2, +pi/2]` maps linearly
//! onto `[0, 1000]`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::model::{JointVector, JOINT_COUNT};
use super::ArmError;

pub const SERVO_MIN: i64 = 0;
pub const SERVO_MAX: i64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServoFrame {
    pub positions: [i64; JOINT_COUNT],
    pub duration_ms: u64,
}

pub fn radian_to_position(q: f64) -> Result<i64, ArmError> {
    if !q.is_finite() || !(-FRAC_PI_2 - 1e-12..=FRAC_PI_2 + 1e-12).contains(&q) {
        return Err(ArmError::ServoRange(format!(
            "angle {q} outside [-pi/2, pi/2]"
        )));
    }
    // f64::round rounds half away from zero.
    let pos = ((q + FRAC_PI_2) / PI * SERVO_MAX as f64).round() as i64;
    Ok(pos.clamp(SERVO_MIN, SERVO_MAX))
}

pub fn position_to_radian(pos: i64) -> Result<f64, ArmError> {
    if !(SERVO_MIN..=SERVO_MAX).contains(&pos) {
        return Err(ArmError::ServoRange(format!(
            "position {pos} outside [0, 1000]"
        )));
    }
    Ok(pos as f64 / SERVO_MAX as f64 * PI - FRAC_PI_2)
}

pub fn radians_to_servo(q: &JointVector, duration_ms: u64) -> Result<ServoFrame, ArmError> {
    let mut positions = [0; JOINT_COUNT];
    for (p, &v) in positions.iter_mut().zip(q.0.iter()) {
        *p = radian_to_position(v)?;
    }
    Ok(ServoFrame {
        positions,
        duration_ms,
    })
}

pub fn servo_to_radians(frame: &ServoFrame) -> Result<JointVector, ArmError> {
    let mut q = [0.0; JOINT_COUNT];
    for (v, &p) in q.iter_mut().zip(frame.positions.iter()) {
        *v = position_to_radian(p)?;
    }
    Ok(JointVector(q))
}

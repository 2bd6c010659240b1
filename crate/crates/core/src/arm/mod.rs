//! Five-joint manipulator: kinematics, wire encoding, collision checks and
//! trim planning.

mod collision;
mod kinematics;
mod model;
mod plan;
mod servo;

use thiserror::Error;

pub use collision::{
    check_collision, segment_cuboid_distance, segment_cylinder_distance, CollisionResult, Cuboid,
    Cylinder, LinkId, ObstacleId, ObstacleSet,
};
pub use kinematics::{
    chain_frames, forward_kinematics, inverse_kinematics, jacobian, ChainFrames, IkOptions,
    IkSolution, IkTarget,
};
pub use model::{ArmModel, JointAxis, JointSpec, JointVector, JOINT_COUNT};
pub use plan::{
    plan_trim, ApproachFailure, ApproachKind, GripperAction, TrimOptions, TrimPlan, TrimWaypoint,
    WaypointLabel,
};
pub use servo::{
    position_to_radian, radian_to_position, radians_to_servo, servo_to_radians, ServoFrame,
    SERVO_MAX, SERVO_MIN,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArmError {
    #[error("invalid arm model: {0}")]
    Model(String),
    #[error("joint {joint} at {value:.4} rad outside [{lower:.4}, {upper:.4}]")]
    LimitViolation {
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("target unreachable: {distance:.3} m from shoulder exceeds reach {reach:.3} m")]
    Unreachable { distance: f64, reach: f64 },
    #[error("inverse kinematics did not converge (best residual {residual:.4} m at {best})")]
    NoConvergence { best: JointVector, residual: f64 },
    #[error("servo value out of range: {0}")]
    ServoRange(String),
    #[error("no collision-free approach: {}", describe(.0))]
    NoPlan(Vec<ApproachFailure>),
}

fn describe(f: &[ApproachFailure]) -> String {
    f.iter()
        .map(|a| format!("{:?} ({})", a.approach, a.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    use super::*;
    use crate::geometry::Vec3;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_q(rng: &mut impl Rng) -> JointVector {
        JointVector(std::array::from_fn(|_| {
            rng.random_range(-FRAC_PI_2..=FRAC_PI_2)
        }))
    }

    #[test]
    fn zero_state_is_fully_extended() {
        let m = ArmModel::default();
        m.validate().unwrap();
        let tip = forward_kinematics(&m, &JointVector::ZERO).unwrap().position;
        assert_abs_diff_eq!(tip, Vec3::new(0.403, 0.0, 0.10), epsilon = 1e-12);
        assert_abs_diff_eq!(tip.xy().norm(), 0.403, epsilon = 1e-12);
    }

    #[test]
    fn base_yaw_rotates_zero_pose() {
        let m = ArmModel::default();
        let tip = forward_kinematics(&m, &JointVector([FRAC_PI_2, 0.0, 0.0, 0.0, 0.0]))
            .unwrap()
            .position;
        assert_abs_diff_eq!(tip, Vec3::new(0.0, 0.403, 0.10), epsilon = 1e-12);
    }

    #[test]
    fn fk_rejects_out_of_limit() {
        let m = ArmModel::default();
        let err = forward_kinematics(&m, &JointVector([0.0, 0.0, 2.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, ArmError::LimitViolation { joint: 3, .. }));
    }

    #[test]
    fn model_validation_checks_reach_sum() {
        let m = ArmModel {
            gripper: 0.2,
            ..ArmModel::default()
        };
        assert!(matches!(m.validate(), Err(ArmError::Model(_))));
    }

    #[test]
    fn ik_fixed_point_at_zero_pose() {
        let m = ArmModel::default();
        let target = forward_kinematics(&m, &JointVector::ZERO).unwrap().position;
        let sol = inverse_kinematics(
            &m,
            &IkTarget::position(target),
            &JointVector::ZERO,
            &IkOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.q, JointVector::ZERO);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn ik_rejects_far_target() {
        let m = ArmModel::default();
        let err = inverse_kinematics(
            &m,
            &IkTarget::position(Vec3::new(0.5, 0.0, 0.10)),
            &JointVector::ZERO,
            &IkOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ArmError::Unreachable { .. }));
    }

    #[test]
    fn ik_recovers_fk_targets() {
        let m = ArmModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seed = JointVector([0.0, -0.4, 1.0, 0.0, 0.0]);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let target = forward_kinematics(&m, &q).unwrap().position;
            let sol = inverse_kinematics(
                &m,
                &IkTarget::position(target),
                &seed,
                &IkOptions::default(),
            )
            .unwrap();
            m.check_limits(&sol.q).unwrap();
            let reached = forward_kinematics(&m, &sol.q).unwrap().position;
            assert!((reached - target).norm() <= 1e-3);
        }
    }

    #[test]
    fn rear_cuboid_hit_when_reaching_back() {
        let m = ArmModel::default();
        // Compute block behind the arm base.
        let obstacles = ObstacleSet {
            cuboids: vec![Cuboid {
                min: Vec3::new(-0.25, -0.10, 0.0),
                max: Vec3::new(-0.06, 0.10, 0.30),
            }],
            cylinders: vec![],
        };
        // Upper arm raised past -pi/4, forearm folded back over the block.
        let q = JointVector([0.0, -3.0 * FRAC_PI_4 / 2.0, -FRAC_PI_2, 0.0, 0.0]);
        let frames = chain_frames(&m, &q);
        let pts = frames.skeleton();
        // Hand-derived: forearm pitch -7pi/8 puts the wrist at (-0.081, 0, 0.296).
        assert_abs_diff_eq!(pts[3], Vec3::new(-0.0812, 0.0, 0.2960), epsilon = 2e-4);
        let expect = segment_cuboid_distance(&pts[2], &pts[3], &obstacles.cuboids[0]);
        assert!(expect < m.link_radius);
        match check_collision(&m, &q, &obstacles) {
            CollisionResult::Colliding { link, obstacle, .. } => {
                assert_eq!(link, LinkId::Link3);
                assert_eq!(obstacle, ObstacleId::Cuboid(0));
            }
            CollisionResult::Clear => panic!("expected a collision"),
        }
        // Same fold with the upper arm only at -pi/8 keeps the arm in front.
        let q = JointVector([0.0, -FRAC_PI_4 / 2.0, -FRAC_PI_2, 0.0, 0.0]);
        assert!(check_collision(&m, &q, &obstacles).is_clear());
        assert!(check_collision(&m, &JointVector::ZERO, &obstacles).is_clear());
    }
}

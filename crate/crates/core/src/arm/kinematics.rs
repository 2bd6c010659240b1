use nalgebra::{SMatrix, SVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ArmModel, JointVector, JOINT_COUNT};
use super::ArmError;
use crate::geometry::{Pose3, Transform, Vec3};

/// World-frame data for every joint of one configuration.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    /// Origin of each joint (before its rotation is applied).
    pub joint_origins: [Vec3; JOINT_COUNT],
    /// Rotation axis of each joint, in the arm base frame.
    pub joint_axes: [Vec3; JOINT_COUNT],
    pub tip: Transform,
}

impl ChainFrames {
    /// Polyline base -> shoulder -> elbow -> wrist -> J5 -> tip.
    pub fn skeleton(&self) -> [Vec3; JOINT_COUNT + 1] {
        let mut pts = [Vec3::zeros(); JOINT_COUNT + 1];
        pts[..JOINT_COUNT].copy_from_slice(&self.joint_origins);
        pts[JOINT_COUNT] = self.tip.translation;
        pts
    }

    /// Unit vector along which the gripper points.
    pub fn tool_axis(&self) -> Vec3 {
        self.tip.apply_vector(&Vec3::x())
    }
}

pub fn chain_frames(model: &ArmModel, q: &JointVector) -> ChainFrames {
    let mut t = Transform::identity();
    let mut joint_origins = [Vec3::zeros(); JOINT_COUNT];
    let mut joint_axes = [Vec3::zeros(); JOINT_COUNT];
    for i in 0..JOINT_COUNT {
        let axis = model.joints[i].axis.unit();
        joint_origins[i] = t.translation;
        joint_axes[i] = t.apply_vector(&axis);
        let rot = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), q.0[i]);
        t = t.compose(&Transform::new(rot, Vec3::zeros()));
        t = t.compose(&Transform::new(
            UnitQuaternion::identity(),
            model.link_offset(i),
        ));
    }
    ChainFrames {
        joint_origins,
        joint_axes,
        tip: t,
    }
}

/// Gripper-tip pose in the arm base frame.
pub fn forward_kinematics(model: &ArmModel, q: &JointVector) -> Result<Pose3, ArmError> {
    model.check_limits(q)?;
    Ok(Pose3::from_transform(&chain_frames(model, q).tip))
}

/// Geometric Jacobian of the tip position (rows 0..3) and orientation (3..6).
pub fn jacobian(frames: &ChainFrames) -> SMatrix<f64, 6, JOINT_COUNT> {
    let tip = frames.tip.translation;
    let mut j = SMatrix::<f64, 6, JOINT_COUNT>::zeros();
    for i in 0..JOINT_COUNT {
        let z = frames.joint_axes[i];
        let lin = z.cross(&(tip - frames.joint_origins[i]));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkOptions {
    pub damping: f64,
    /// Largest per-joint change in one iteration (rad).
    pub step_cap: f64,
    pub max_iterations: usize,
    /// Position tolerance (m).
    pub tolerance: f64,
    /// Gain pulling redundant DoF back toward the preferred posture.
    pub posture_gain: f64,
    /// Joints closer than this to a limit are pushed back in the null space.
    pub limit_margin: f64,
    /// Acceptable gripper-axis error when an approach direction is given.
    pub approach_tolerance: f64,
    /// Retry from canned seeds when the caller's seed does not converge.
    pub restarts: bool,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 0.05,
            step_cap: 0.2,
            max_iterations: 500,
            tolerance: 1e-3,
            posture_gain: 0.05,
            limit_margin: 0.1,
            approach_tolerance: 0.15,
            restarts: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkTarget {
    pub position: Vec3,
    /// Desired gripper pointing direction (unit), weighted against position.
    pub approach: Option<Vec3>,
    pub approach_weight: f64,
}

impl IkTarget {
    pub fn position(p: Vec3) -> Self {
        Self {
            position: p,
            approach: None,
            approach_weight: 0.0,
        }
    }

    pub fn with_approach(p: Vec3, dir: Vec3, weight: f64) -> Self {
        Self {
            position: p,
            approach: Some(dir.normalize()),
            approach_weight: weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub q: JointVector,
    pub residual: f64,
    pub iterations: usize,
    /// Angle between the gripper axis and the requested approach (rad).
    pub approach_error: Option<f64>,
}

pub fn inverse_kinematics(
    model: &ArmModel,
    target: &IkTarget,
    seed: &JointVector,
    opts: &IkOptions,
) -> Result<IkSolution, ArmError> {
    let distance = (target.position - model.shoulder()).norm();
    if distance > model.gripper_reach_total {
        return Err(ArmError::Unreachable {
            distance,
            reach: model.gripper_reach_total,
        });
    }

    let mut best: Option<IkSolution> = None;
    let mut seeds = vec![model.clamp(seed)];
    if opts.restarts {
        seeds.extend(restart_seeds(model, &target.position));
    }
    let mut total_iterations = 0;
    for s in &seeds {
        let sol = solve_from(model, target, s, opts);
        total_iterations += sol.iterations;
        let converged = sol.residual <= opts.tolerance;
        let aligned = sol
            .approach_error
            .is_none_or(|e| e <= opts.approach_tolerance);
        if converged && aligned {
            return Ok(IkSolution {
                iterations: total_iterations,
                ..sol
            });
        }
        let better = match &best {
            None => true,
            Some(b) => rank(&sol, opts) < rank(b, opts),
        };
        if better {
            best = Some(sol);
        }
    }
    let best = best.expect("at least one seed");
    if best.residual <= opts.tolerance {
        // Position reached but the approach direction could not be matched.
        return Ok(IkSolution {
            iterations: total_iterations,
            ..best
        });
    }
    Err(ArmError::NoConvergence {
        best: best.q,
        residual: best.residual,
    })
}

fn rank(sol: &IkSolution, opts: &IkOptions) -> (bool, f64) {
    let converged = sol.residual <= opts.tolerance;
    (
        !converged,
        if converged {
            sol.approach_error.unwrap_or(0.0)
        } else {
            sol.residual
        },
    )
}

fn restart_seeds(model: &ArmModel, target: &Vec3) -> Vec<JointVector> {
    let yaw = target.y.atan2(target.x);
    let shapes: [[f64; 4]; 6] = [
        [-0.4, 1.0, 0.0, 0.0],
        [0.3, 0.9, 0.0, 0.0],
        [-1.0, 1.4, 0.0, 0.6],
        [-0.8, 0.6, 0.8, 0.6],
        [-0.8, 0.6, -0.8, -0.6],
        [0.6, -0.5, 0.0, 0.3],
    ];
    let mut out = Vec::new();
    for yaw_seed in [yaw, yaw - std::f64::consts::PI] {
        for s in shapes {
            out.push(model.clamp(&JointVector([yaw_seed, s[0], s[1], s[2], s[3]])));
        }
    }
    // Fixed scatter over the joint box for targets the canned shapes miss
    // (mostly behind the base, where J1 alone cannot face the target).
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let limits = model.limits();
    for _ in 0..24 {
        out.push(JointVector(std::array::from_fn(|i| {
            rng.random_range(limits[i].0..=limits[i].1)
        })));
    }
    out
}

fn solve_from(
    model: &ArmModel,
    target: &IkTarget,
    seed: &JointVector,
    opts: &IkOptions,
) -> IkSolution {
    let limits = model.limits();
    let preferred = *seed;
    let mut q = *seed;
    let mut best = evaluate(model, target, &q);
    let mut best_rank = rank(&best, opts);
    let weight = match target.approach {
        Some(_) if target.approach_weight > 0.0 => target.approach_weight,
        _ => 0.0,
    };
    let lambda2 = opts.damping * opts.damping;
    let mut last_progress = (0usize, best.residual);

    for it in 0..opts.max_iterations {
        let frames = chain_frames(model, &q);
        let tip = frames.tip.translation;
        let e_pos = target.position - tip;
        let mut aligned = true;
        let mut e = SVector::<f64, 6>::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&e_pos);
        if weight > 0.0 {
            let axis = frames.tool_axis();
            let want = target.approach.unwrap();
            let e_rot: Vector3<f64> = axis.cross(&want);
            aligned = axis.dot(&want).clamp(-1.0, 1.0).acos() <= opts.approach_tolerance;
            e.fixed_rows_mut::<3>(3).copy_from(&(e_rot * weight));
        }
        if e_pos.norm() <= opts.tolerance && aligned {
            return IkSolution {
                iterations: it,
                ..evaluate(model, target, &q)
            };
        }

        let mut j = jacobian(&frames);
        if weight > 0.0 {
            for c in 0..JOINT_COUNT {
                for r in 3..6 {
                    j[(r, c)] *= weight;
                }
            }
        } else {
            j.fixed_rows_mut::<3>(3).fill(0.0);
        }

        // Active set: joints sitting on a limit and pushed further out are
        // frozen and the step is recomputed without them.
        let mut locked = [false; JOINT_COUNT];
        let mut dq = SVector::<f64, JOINT_COUNT>::zeros();
        for _pass in 0..JOINT_COUNT {
            let mut jl = j;
            for (c, &l) in locked.iter().enumerate() {
                if l {
                    jl.column_mut(c).fill(0.0);
                }
            }
            let jt = jl.transpose();
            let mut jjt = jl * jt;
            for d in 0..6 {
                jjt[(d, d)] += lambda2;
            }
            let Some(inv) = jjt.try_inverse() else {
                break;
            };
            let pinv = jt * inv;
            dq = pinv * e;

            // Secondary objective in the null space: stay near the preferred
            // posture and away from limits.
            let mut secondary = SVector::<f64, JOINT_COUNT>::zeros();
            for i in 0..JOINT_COUNT {
                if locked[i] {
                    continue;
                }
                let (lo, hi) = limits[i];
                let mut s = opts.posture_gain * (preferred.0[i] - q.0[i]);
                if q.0[i] - lo < opts.limit_margin {
                    s += opts.limit_margin - (q.0[i] - lo);
                } else if hi - q.0[i] < opts.limit_margin {
                    s -= opts.limit_margin - (hi - q.0[i]);
                }
                secondary[i] = s;
            }
            // Undamped projector: the damped one leaks into the task space
            // and stalls the last millimetre.
            let exact = jl.pseudo_inverse(1e-6).unwrap_or(pinv);
            let null = SMatrix::<f64, JOINT_COUNT, JOINT_COUNT>::identity() - exact * jl;
            dq += null * secondary;
            for (i, &l) in locked.iter().enumerate() {
                if l {
                    dq[i] = 0.0;
                }
            }

            let mut changed = false;
            for i in 0..JOINT_COUNT {
                let (lo, hi) = limits[i];
                let pushing_out =
                    (q.0[i] <= lo + 1e-9 && dq[i] < 0.0) || (q.0[i] >= hi - 1e-9 && dq[i] > 0.0);
                if !locked[i] && pushing_out {
                    locked[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let largest = dq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if largest > opts.step_cap {
            dq *= opts.step_cap / largest;
        }
        let next = JointVector(std::array::from_fn(|i| {
            (q.0[i] + dq[i]).clamp(limits[i].0, limits[i].1)
        }));
        if next.max_abs_diff(&q) < 1e-12 {
            break;
        }
        q = next;
        let sol = evaluate(model, target, &q);
        let r = rank(&sol, opts);
        if r < best_rank {
            best_rank = r;
            best = sol;
        }
        best.iterations = it + 1;
        if sol.residual < last_progress.1 - 1e-5 {
            last_progress = (it, sol.residual);
        } else if it - last_progress.0 > 60 {
            // Stalled in a local minimum; let the caller restart elsewhere.
            break;
        }
    }
    best
}

fn evaluate(model: &ArmModel, target: &IkTarget, q: &JointVector) -> IkSolution {
    let frames = chain_frames(model, q);
    let residual = (target.position - frames.tip.translation).norm();
    let approach_error = target
        .approach
        .map(|want| frames.tool_axis().dot(&want).clamp(-1.0, 1.0).acos());
    IkSolution {
        q: *q,
        residual,
        iterations: 0,
        approach_error,
    }
}

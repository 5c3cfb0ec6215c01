//! Floating-base forward kinematics, geometric Jacobians and state
//! integration.
//!
//! Frame convention, used everywhere in this crate: all twists, Jacobians and
//! poses are expressed in the inertial (world) frame. A velocity vector ν has
//! layout `[base_linear; base_angular; s_dot]` with dimension 6 + n, matching
//! the model's `dof_order`.

use crate::model::KinematicModel;
use crate::so3::{exp_so3, log_so3, skew, Rotation};
use nalgebra::{DVector, Matrix3xX, Vector3};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum KinematicsError {
    DimensionMismatch { expected: usize, actual: usize },
    UnknownLink { name: String },
}

impl fmt::Display for KinematicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { expected, actual } => {
                write!(f, "joint vector has {actual} entries, model has {expected} dofs")
            }
            Self::UnknownLink { name } => write!(f, "unknown link '{name}'"),
        }
    }
}

impl std::error::Error for KinematicsError {}

/// Base pose plus joint positions: everything needed to pose the robot.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    /// Base origin in the inertial frame (m).
    pub base_position: Vector3<f64>,
    /// Base orientation in the inertial frame.
    pub base_orientation: Rotation,
    /// Joint positions (rad), ordered as `model.dof_order()`.
    pub s: DVector<f64>,
}

impl SystemState {
    /// Identity base with all joints at zero, each clamped into its limit
    /// range (a joint whose range excludes zero starts at the nearer bound).
    pub fn neutral(model: &KinematicModel) -> Self {
        let s = DVector::from_iterator(
            model.n_dof(),
            (0..model.n_dof()).map(|d| match model.dof_joint(d).limits {
                Some(l) => 0.0_f64.clamp(l.pos_min, l.pos_max),
                None => 0.0,
            }),
        );
        SystemState {
            base_position: Vector3::zeros(),
            base_orientation: Rotation::identity(),
            s,
        }
    }
}

/// System velocity ν: base twist plus joint rates, inertial frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemVelocity {
    pub base_linear: Vector3<f64>,
    pub base_angular: Vector3<f64>,
    /// Joint velocities (rad/s), ordered as `model.dof_order()`.
    pub s_dot: DVector<f64>,
}

impl SystemVelocity {
    pub fn zero(n_dof: usize) -> Self {
        SystemVelocity {
            base_linear: Vector3::zeros(),
            base_angular: Vector3::zeros(),
            s_dot: DVector::zeros(n_dof),
        }
    }

    /// Total dimension 6 + n.
    pub fn dim(&self) -> usize {
        6 + self.s_dot.len()
    }

    /// Packs as `[base_linear; base_angular; s_dot]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v.fixed_rows_mut::<3>(0).copy_from(&self.base_linear);
        v.fixed_rows_mut::<3>(3).copy_from(&self.base_angular);
        v.rows_mut(6, self.s_dot.len()).copy_from(&self.s_dot);
        v
    }

    /// Inverse of [`to_vector`](Self::to_vector); `v.len()` must be ≥ 6.
    pub fn from_vector(v: &DVector<f64>) -> Self {
        assert!(v.len() >= 6, "velocity vector shorter than the base twist");
        SystemVelocity {
            base_linear: v.fixed_rows::<3>(0).into(),
            base_angular: v.fixed_rows::<3>(3).into(),
            s_dot: v.rows(6, v.len() - 6).into_owned(),
        }
    }
}

/// World-frame pose of one link frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePose {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
}

fn check_dims(model: &KinematicModel, state: &SystemState) -> Result<(), KinematicsError> {
    if state.s.len() != model.n_dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: model.n_dof(),
            actual: state.s.len(),
        });
    }
    Ok(())
}

/// Poses of every link, indexed like `model.links()`.
///
/// The root pose is the base pose; each child is the parent pose composed
/// with the joint's fixed origin transform and its rotation about the axis.
pub fn forward_kinematics(
    model: &KinematicModel,
    state: &SystemState,
) -> Result<Vec<FramePose>, KinematicsError> {
    check_dims(model, state)?;
    let mut poses = vec![
        FramePose {
            rotation: Rotation::identity(),
            position: Vector3::zeros(),
        };
        model.links().len()
    ];
    poses[model.root()] = FramePose {
        rotation: state.base_orientation,
        position: state.base_position,
    };
    for &l in model.topo_order().iter().skip(1) {
        let j = model.links()[l].parent_joint.expect("non-root link has a parent");
        let joint = &model.joints()[j];
        let parent = &poses[joint.parent_link];
        let position = parent.position + parent.rotation.rotate(&joint.origin_xyz);
        let mut rotation = parent.rotation * *joint.origin_rotation();
        if let Some(dof) = model.joint_dof(j) {
            rotation = rotation * exp_so3(&(joint.axis * state.s[dof]));
        }
        poses[l] = FramePose { rotation, position };
    }
    Ok(poses)
}

/// Angular Jacobian J^a of `link`: ω_link = J^a ν for any system velocity ν.
pub fn angular_jacobian(
    model: &KinematicModel,
    state: &SystemState,
    link: &str,
) -> Result<Matrix3xX<f64>, KinematicsError> {
    let index = model
        .link_index(link)
        .ok_or_else(|| KinematicsError::UnknownLink { name: link.into() })?;
    let poses = forward_kinematics(model, state)?;
    Ok(angular_jacobian_at(model, &poses, index))
}

/// [`angular_jacobian`] on precomputed poses, for per-frame loops that
/// query many links from one forward-kinematics pass.
pub fn angular_jacobian_at(
    model: &KinematicModel,
    poses: &[FramePose],
    link: usize,
) -> Matrix3xX<f64> {
    let n = model.n_dof();
    let mut jac = Matrix3xX::zeros(6 + n);
    // Base linear motion does not rotate anything; base angular velocity
    // carries over one-to-one in the world frame.
    jac.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
    for (dof, child_link) in model.path_dofs(link) {
        let joint = model.dof_joint(dof);
        let world_axis = poses[child_link].rotation.rotate(&joint.axis);
        jac.column_mut(6 + dof).copy_from(&world_axis);
    }
    jac
}

/// Linear Jacobian J^l of `link`: ṗ_link = J^l ν for any system velocity ν.
pub fn linear_jacobian(
    model: &KinematicModel,
    state: &SystemState,
    link: &str,
) -> Result<Matrix3xX<f64>, KinematicsError> {
    let index = model
        .link_index(link)
        .ok_or_else(|| KinematicsError::UnknownLink { name: link.into() })?;
    let poses = forward_kinematics(model, state)?;
    Ok(linear_jacobian_at(model, &poses, index))
}

/// [`linear_jacobian`] on precomputed poses.
pub fn linear_jacobian_at(
    model: &KinematicModel,
    poses: &[FramePose],
    link: usize,
) -> Matrix3xX<f64> {
    let n = model.n_dof();
    let p_link = poses[link].position;
    let mut jac = Matrix3xX::zeros(6 + n);
    jac.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    // ṗ = ṗ_B + ω_B × (p_link − p_B): the cross product as a matrix in ω_B.
    let r = p_link - poses[model.root()].position;
    jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&r)));
    for (dof, child_link) in model.path_dofs(link) {
        let joint = model.dof_joint(dof);
        let world_axis = poses[child_link].rotation.rotate(&joint.axis);
        let lever = p_link - poses[child_link].position;
        jac.column_mut(6 + dof).copy_from(&world_axis.cross(&lever));
    }
    jac
}

/// Explicit Euler step: `s ← clamp(s + ṡ·dt)`, base orientation advanced by
/// `exp(ω·dt)` on the left and re-orthonormalized, base position advanced
/// linearly. Clamping is a safety net; a velocity respecting the joint-limit
/// constraints stays inside the bounds on its own.
pub fn integrate(
    model: &KinematicModel,
    state: &SystemState,
    vel: &SystemVelocity,
    dt: f64,
) -> SystemState {
    assert!(dt > 0.0, "integration step must be positive");
    let mut s = &state.s + &vel.s_dot * dt;
    for d in 0..model.n_dof() {
        if let Some(l) = model.dof_joint(d).limits {
            s[d] = s[d].clamp(l.pos_min, l.pos_max);
        }
    }
    let rotated = exp_so3(&(vel.base_angular * dt)) * state.base_orientation;
    SystemState {
        base_position: state.base_position + vel.base_linear * dt,
        base_orientation: Rotation::renormalized(rotated.matrix()),
        s,
    }
}

/// Central finite-difference directional derivative of a link orientation:
/// `vee(log(R(q ⊕ hν) · R(q ⊖ hν)ᵀ)) / 2h`. Used by oracle tests; exposed
/// here so integration tests share one implementation.
pub fn fd_orientation_derivative(
    model: &KinematicModel,
    state: &SystemState,
    link: usize,
    direction: &DVector<f64>,
    h: f64,
) -> Vector3<f64> {
    let plus = forward_kinematics(model, &perturb(state, direction, h)).unwrap();
    let minus = forward_kinematics(model, &perturb(state, direction, -h)).unwrap();
    let delta = plus[link].rotation * minus[link].rotation.inverse();
    log_so3(&delta) / (2.0 * h)
}

/// Central finite-difference directional derivative of a link position.
pub fn fd_position_derivative(
    model: &KinematicModel,
    state: &SystemState,
    link: usize,
    direction: &DVector<f64>,
    h: f64,
) -> Vector3<f64> {
    let plus = forward_kinematics(model, &perturb(state, direction, h)).unwrap();
    let minus = forward_kinematics(model, &perturb(state, direction, -h)).unwrap();
    (plus[link].position - minus[link].position) / (2.0 * h)
}

/// Moves the state along velocity coordinates: positions linearly, base
/// orientation through exponential coordinates on the left.
fn perturb(state: &SystemState, direction: &DVector<f64>, h: f64) -> SystemState {
    let delta = direction * h;
    let omega: Vector3<f64> = delta.fixed_rows::<3>(3).into();
    SystemState {
        base_position: state.base_position + Vector3::from(delta.fixed_rows::<3>(0)),
        base_orientation: exp_so3(&omega) * state.base_orientation,
        s: &state.s + delta.rows(6, state.s.len()),
    }
}

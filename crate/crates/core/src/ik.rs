//! Velocity-level inverse kinematics with feedback error dynamics.
//!
//! Each step tracks link orientation targets by driving the orientation error
//! E toward zero: the commanded link angular velocity is ω* + K·E, realized
//! in the least-squares sense through the stacked angular Jacobians, subject
//! to joint velocity and position-limit constraints:
//!
//! minimize  ‖(ω* + K·E) − J ν‖² + λ²‖ν‖²   subject to  G ν ≤ g
//!
//! The solution ν is integrated over dt to produce the next state, so the
//! error contracts at rate K along the unconstrained directions while
//! constrained joints saturate gracefully at their bounds.

use crate::kinematics::{
    angular_jacobian_at, forward_kinematics, integrate, FramePose, KinematicsError, SystemState,
    SystemVelocity,
};
use crate::model::KinematicModel;
use crate::retarget::TargetSet;
use crate::so3::{geodesic_angle, rotation_error};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::fmt;

pub mod qp;

pub use qp::{ConstraintSet, KktResiduals, QpError, QpSolution, QpWorkspace};

/// Regularization floor: keeps the Hessian positive definite when λ = 0 is
/// requested, without visibly perturbing the solution.
pub const LAMBDA_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub enum IkError {
    Kinematics(KinematicsError),
    Qp(QpError),
    BadParams(String),
}

impl fmt::Display for IkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Kinematics(e) => write!(f, "{e}"),
            Self::Qp(e) => write!(f, "{e}"),
            Self::BadParams(msg) => write!(f, "bad solver parameters: {msg}"),
        }
    }
}

impl std::error::Error for IkError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Kinematics(e) => Some(e),
            Self::Qp(e) => Some(e),
            Self::BadParams(_) => None,
        }
    }
}

impl From<KinematicsError> for IkError {
    fn from(e: KinematicsError) -> Self {
        IkError::Kinematics(e)
    }
}

impl From<QpError> for IkError {
    fn from(e: QpError) -> Self {
        IkError::Qp(e)
    }
}

/// Solver parameters; the defaults suit a 200 Hz stream.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkParams {
    /// Error feedback gain K (1/s), applied to every link unless overridden.
    pub gain: f64,
    /// Per-robot-link gain overrides.
    pub link_gains: BTreeMap<String, f64>,
    /// Velocity regularization weight λ (≥ 0; 0 is floored to
    /// [`LAMBDA_FLOOR`] internally).
    pub lambda: f64,
    /// Distinct regularization for the six base velocity components;
    /// `None` applies `lambda` uniformly.
    pub base_lambda: Option<f64>,
    /// Integration step (s); streams override per frame from timestamps.
    pub dt: f64,
    /// KKT residual bound accepted from the QP solver.
    pub qp_tolerance: f64,
    /// Active-set iteration cap per solve.
    pub max_qp_iters: usize,
    /// Treat the base as welded: base columns leave the problem and the
    /// returned base velocity is zero.
    pub fixed_base: bool,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams {
            gain: 10.0,
            link_gains: BTreeMap::new(),
            lambda: 1e-3,
            base_lambda: None,
            dt: 0.005,
            qp_tolerance: 1e-8,
            max_qp_iters: 200,
            fixed_base: false,
        }
    }
}

impl IkParams {
    pub fn validate(&self) -> Result<(), IkError> {
        if !(self.gain > 0.0) {
            return Err(IkError::BadParams(format!("gain {} must be positive", self.gain)));
        }
        for (link, g) in &self.link_gains {
            if !(*g > 0.0) {
                return Err(IkError::BadParams(format!(
                    "gain {g} for link '{link}' must be positive"
                )));
            }
        }
        if !(self.lambda >= 0.0) {
            return Err(IkError::BadParams(format!(
                "lambda {} must be non-negative",
                self.lambda
            )));
        }
        if let Some(b) = self.base_lambda {
            if !(b >= 0.0) {
                return Err(IkError::BadParams(format!(
                    "base lambda {b} must be non-negative"
                )));
            }
        }
        if !(self.dt > 0.0) {
            return Err(IkError::BadParams(format!("dt {} must be positive", self.dt)));
        }
        if !(self.qp_tolerance > 0.0) {
            return Err(IkError::BadParams(format!(
                "qp tolerance {} must be positive",
                self.qp_tolerance
            )));
        }
        if self.max_qp_iters == 0 {
            return Err(IkError::BadParams("iteration cap must be at least 1".into()));
        }
        Ok(())
    }

    fn gain_for(&self, robot_link: &str) -> f64 {
        self.link_gains.get(robot_link).copied().unwrap_or(self.gain)
    }

    /// Problem dimension for a model: 6 + n floating, n welded.
    pub fn solve_dim(&self, model: &KinematicModel) -> usize {
        if self.fixed_base {
            model.n_dof()
        } else {
            6 + model.n_dof()
        }
    }
}

/// One frame's assembled tracking problem.
#[derive(Debug, Clone, PartialEq)]
pub struct IkProblem {
    /// Stacked orientation errors, 3 rows per tracked link, √weight-scaled.
    pub errors: DVector<f64>,
    /// Stacked feedforward angular velocity targets, √weight-scaled.
    pub feedforward: DVector<f64>,
    /// Stacked angular Jacobians, √weight-scaled rows.
    pub jacobian: DMatrix<f64>,
    /// Feedback gain per row (replicated per 3-row block).
    pub gains: DVector<f64>,
    /// Objective weight per tracked link.
    pub weights: DVector<f64>,
    /// Model link index per tracked link, in target order.
    pub links: Vec<usize>,
    pub constraints: ConstraintSet,
}

/// Joint velocity/position-limit rows over the solve dimension: per movable
/// joint, `ṡ ≤ min(vel_max, (pos_max − s)/dt)` and the mirrored lower row,
/// both floored at 0 so that ν = 0 is always feasible. Continuous joints get
/// pure velocity rows. The base is never constrained.
pub fn build_constraints(
    model: &KinematicModel,
    state: &SystemState,
    params: &IkParams,
) -> ConstraintSet {
    let n = model.n_dof();
    let dim = params.solve_dim(model);
    let col0 = dim - n; // joint columns start after any base columns
    let mut rows = Vec::with_capacity(2 * n);
    for d in 0..n {
        let joint = model.dof_joint(d);
        let (mut up, mut down) = (joint.vel_max, joint.vel_max);
        if let Some(l) = joint.limits {
            up = up.min((l.pos_max - state.s[d]) / params.dt).max(0.0);
            down = down.min((state.s[d] - l.pos_min) / params.dt).max(0.0);
        }
        rows.push((col0 + d, 1.0, up));
        rows.push((col0 + d, -1.0, down));
    }
    let mut matrix = DMatrix::zeros(rows.len(), dim);
    let mut rhs = DVector::zeros(rows.len());
    for (r, (col, coef, bound)) in rows.into_iter().enumerate() {
        matrix[(r, col)] = coef;
        rhs[r] = bound;
    }
    ConstraintSet { matrix, rhs }
}

/// Assembles errors, feedforward terms, Jacobians and constraints for one
/// frame. Fails with `UnknownLink` when a target names a link the model
/// lacks, and `DimensionMismatch` when the state does not fit the model.
pub fn build_problem(
    model: &KinematicModel,
    state: &SystemState,
    targets: &TargetSet,
    params: &IkParams,
) -> Result<IkProblem, IkError> {
    params.validate()?;
    let poses = forward_kinematics(model, state)?;
    build_problem_with_poses(model, state, &poses, targets, params)
}

fn build_problem_with_poses(
    model: &KinematicModel,
    state: &SystemState,
    poses: &[FramePose],
    targets: &TargetSet,
    params: &IkParams,
) -> Result<IkProblem, IkError> {
    let k = targets.targets.len();
    let dim = params.solve_dim(model);
    let full_dim = 6 + model.n_dof();
    let mut errors = DVector::zeros(3 * k);
    let mut feedforward = DVector::zeros(3 * k);
    let mut jacobian = DMatrix::zeros(3 * k, dim);
    let mut gains = DVector::zeros(3 * k);
    let mut weights = DVector::zeros(k);
    let mut links = Vec::with_capacity(k);

    for (i, target) in targets.targets.iter().enumerate() {
        let link = model
            .link_index(&target.robot_link)
            .ok_or_else(|| KinematicsError::UnknownLink {
                name: target.robot_link.clone(),
            })?;
        let sqrt_w = target.weight.sqrt();
        let gain = params.gain_for(&target.robot_link);
        let e = rotation_error(&target.orientation, &poses[link].rotation);
        let jac = angular_jacobian_at(model, poses, link);
        let row = 3 * i;
        errors.fixed_rows_mut::<3>(row).copy_from(&(e * sqrt_w));
        feedforward
            .fixed_rows_mut::<3>(row)
            .copy_from(&(target.angular_velocity * sqrt_w));
        // With a welded base the six base columns drop out of the problem.
        jacobian
            .view_mut((row, 0), (3, dim))
            .copy_from(&jac.view((0, full_dim - dim), (3, dim)));
        jacobian.view_mut((row, 0), (3, dim)).scale_mut(sqrt_w);
        gains.rows_mut(row, 3).fill(gain);
        weights[i] = target.weight;
        links.push(link);
    }

    Ok(IkProblem {
        errors,
        feedforward,
        jacobian,
        gains,
        weights,
        links,
        constraints: build_constraints(model, state, params),
    })
}

/// Per-step solver report.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// Geodesic orientation error (rad) per tracked link at the *integrated*
    /// state, in target order.
    pub link_errors: Vec<f64>,
    /// Constraint rows active at the solution.
    pub active_rows: Vec<usize>,
    pub qp_iterations: usize,
    pub residuals: KktResiduals,
}

impl StepDiagnostics {
    pub fn active_constraints(&self) -> usize {
        self.active_rows.len()
    }
}

/// Result of one IK step.
#[derive(Debug, Clone, PartialEq)]
pub struct IkOutcome {
    pub velocity: SystemVelocity,
    pub next_state: SystemState,
    pub diagnostics: StepDiagnostics,
}

/// Streaming solver: owns the QP workspace (warm-started across frames) and
/// the Hessian/gradient buffers. One solver per stream; solvers share
/// nothing, so independent streams may run on separate threads.
#[derive(Debug, Clone)]
pub struct IkSolver {
    params: IkParams,
    h: DMatrix<f64>,
    f: DVector<f64>,
    workspace: QpWorkspace,
}

impl IkSolver {
    pub fn new(model: &KinematicModel, params: IkParams) -> Result<Self, IkError> {
        params.validate()?;
        let dim = params.solve_dim(model);
        Ok(IkSolver {
            params,
            h: DMatrix::zeros(dim, dim),
            f: DVector::zeros(dim),
            workspace: QpWorkspace::new(dim),
        })
    }

    pub fn params(&self) -> &IkParams {
        &self.params
    }

    /// Overrides the integration step for subsequent frames (streams derive
    /// it from consecutive timestamps).
    pub fn set_dt(&mut self, dt: f64) -> Result<(), IkError> {
        if !(dt > 0.0) {
            return Err(IkError::BadParams(format!("dt {dt} must be positive")));
        }
        self.params.dt = dt;
        Ok(())
    }

    /// Advances one frame: assemble, solve, integrate, report.
    pub fn step(
        &mut self,
        model: &KinematicModel,
        state: &SystemState,
        targets: &TargetSet,
    ) -> Result<IkOutcome, IkError> {
        let problem = build_problem(model, state, targets, &self.params)?;
        let dim = self.workspace.dim();
        assert_eq!(
            problem.jacobian.ncols(),
            dim,
            "solver was built for a different model"
        );

        // b = ω* + K·E; H = JᵀJ + Λ²; f = −Jᵀb. Λ is λ everywhere except an
        // optional distinct base weight, floored away from zero.
        let b = &problem.feedforward + problem.gains.component_mul(&problem.errors);
        self.h.gemm_tr(1.0, &problem.jacobian, &problem.jacobian, 0.0);
        let joint_lambda = self.params.lambda.max(LAMBDA_FLOOR);
        let base_lambda = self
            .params
            .base_lambda
            .unwrap_or(self.params.lambda)
            .max(LAMBDA_FLOOR);
        let base_cols = dim - model.n_dof();
        for i in 0..dim {
            let l = if i < base_cols { base_lambda } else { joint_lambda };
            self.h[(i, i)] += l * l;
        }
        self.f.gemv_tr(-1.0, &problem.jacobian, &b, 0.0);

        let solution = qp::qp_solve(
            &mut self.workspace,
            &self.h,
            &self.f,
            &problem.constraints,
            self.params.qp_tolerance,
            self.params.max_qp_iters,
        )?;

        let velocity = self.unpack_velocity(model, &solution.x);
        let next_state = integrate(model, state, &velocity, self.params.dt);
        let next_poses = forward_kinematics(model, &next_state)?;
        let link_errors = targets
            .targets
            .iter()
            .zip(&problem.links)
            .map(|(t, &l)| geodesic_angle(&t.orientation, &next_poses[l].rotation))
            .collect();

        Ok(IkOutcome {
            velocity,
            next_state,
            diagnostics: StepDiagnostics {
                link_errors,
                active_rows: solution.active_rows,
                qp_iterations: solution.iterations,
                residuals: solution.residuals,
            },
        })
    }

    fn unpack_velocity(&self, model: &KinematicModel, x: &DVector<f64>) -> SystemVelocity {
        if self.params.fixed_base {
            SystemVelocity {
                base_linear: nalgebra::Vector3::zeros(),
                base_angular: nalgebra::Vector3::zeros(),
                s_dot: x.clone_owned(),
            }
        } else {
            let _ = model;
            SystemVelocity::from_vector(x)
        }
    }
}

/// One-shot step with a cold-started solver; streams should hold an
/// [`IkSolver`] instead to benefit from warm starts.
pub fn ik_step(
    model: &KinematicModel,
    state: &SystemState,
    targets: &TargetSet,
    params: &IkParams,
) -> Result<IkOutcome, IkError> {
    IkSolver::new(model, params.clone())?.step(model, state, targets)
}

//! Immutable floating-base kinematic tree with joint limits, parsed from a
//! URDF subset (revolute, continuous and fixed joints only).
//!
//! The floating base is implicit at the root link; it never appears as a URDF
//! joint. Models are immutable after construction and safe to share across
//! threads.

use crate::so3::Rotation;
use nalgebra::Vector3;
use std::collections::HashMap;
use std::fmt;

mod urdf;

pub use urdf::{parse_urdf, serialize_urdf};

/// Default velocity limit (rad/s) applied when a movable joint omits one.
pub const DEFAULT_VEL_MAX: f64 = 10.0;

/// Joints whose axis norm is within this tolerance of 1 are silently
/// normalized at parse time; anything further off is rejected.
pub const AXIS_NORM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    MalformedXml(String),
    UnknownJointType { joint: String, kind: String },
    MissingLimit { joint: String },
    CycleDetected { link: String },
    DuplicateName { name: String },
    ModelInconsistent(String),
    BadAxis { joint: String, norm: f64 },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MalformedXml(msg) => write!(f, "malformed XML: {msg}"),
            Self::UnknownJointType { joint, kind } => {
                write!(f, "joint '{joint}' has unsupported type '{kind}'")
            }
            Self::MissingLimit { joint } => {
                write!(f, "revolute joint '{joint}' has no position limits")
            }
            Self::CycleDetected { link } => {
                write!(f, "link '{link}' is part of a cycle")
            }
            Self::DuplicateName { name } => write!(f, "duplicate name '{name}'"),
            Self::ModelInconsistent(msg) => write!(f, "inconsistent model: {msg}"),
            Self::BadAxis { joint, norm } => {
                write!(f, "joint '{joint}' axis norm {norm} is too far from 1")
            }
        }
    }
}

impl std::error::Error for ModelError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Continuous,
    Fixed,
}

impl JointKind {
    pub fn is_movable(self) -> bool {
        !matches!(self, JointKind::Fixed)
    }
}

/// Position bounds of a revolute joint (rad). Continuous joints carry none.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub pos_min: f64,
    pub pos_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Rotation axis in the child-link frame; unit for movable joints.
    pub axis: Vector3<f64>,
    /// Fixed-transform translation from the parent link frame (m).
    pub origin_xyz: Vector3<f64>,
    /// Fixed-transform rotation as URDF roll-pitch-yaw (extrinsic x-y-z, rad).
    /// Kept in this form so the canonical serialization round-trips exactly.
    pub origin_rpy: Vector3<f64>,
    pub limits: Option<JointLimits>,
    /// Velocity limit (rad/s) for movable joints.
    pub vel_max: f64,
    /// True when `vel_max` came from [`DEFAULT_VEL_MAX`] rather than the file.
    pub vel_max_defaulted: bool,
    pub parent_link: usize,
    pub child_link: usize,
    origin_rotation: Rotation,
}

impl Joint {
    /// Fixed-transform rotation derived from `origin_rpy`.
    pub fn origin_rotation(&self) -> &Rotation {
        &self.origin_rotation
    }
}

/// `R = Rz(yaw) Ry(pitch) Rx(roll)`, the URDF fixed-axis rpy convention.
pub fn rotation_from_rpy(rpy: &Vector3<f64>) -> Rotation {
    Rotation::rot_z(rpy.z) * Rotation::rot_y(rpy.y) * Rotation::rot_x(rpy.x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    /// Index into [`KinematicModel::joints`]; `None` for the root.
    pub parent_joint: Option<usize>,
}

/// Immutable kinematic tree. Link and joint indices are stable; movable
/// joints appear in `dof_order` in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicModel {
    pub name: String,
    links: Vec<Link>,
    joints: Vec<Joint>,
    root: usize,
    dof_order: Vec<String>,
    /// Joint index per degree of freedom, aligned with `dof_order`.
    dof_joints: Vec<usize>,
    /// Degree-of-freedom index per joint; `None` for fixed joints.
    joint_dofs: Vec<Option<usize>>,
    link_index: HashMap<String, usize>,
    /// Links in parent-before-child order for forward traversals.
    topo_order: Vec<usize>,
}

impl KinematicModel {
    pub fn n_dof(&self) -> usize {
        self.dof_order.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_link(&self) -> &Link {
        &self.links[self.root]
    }

    pub fn dof_order(&self) -> &[String] {
        &self.dof_order
    }

    /// Joint backing degree of freedom `dof`.
    pub fn dof_joint(&self, dof: usize) -> &Joint {
        &self.joints[self.dof_joints[dof]]
    }

    /// Degree-of-freedom index of joint `joint`; `None` when fixed.
    pub fn joint_dof(&self, joint: usize) -> Option<usize> {
        self.joint_dofs[joint]
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.link_index.get(name).copied()
    }

    pub fn link_name(&self, index: usize) -> &str {
        &self.links[index].name
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    /// Degrees of freedom on the path from the root to `link`, with each
    /// joint's child-link index. Innermost joint first.
    pub fn path_dofs(&self, link: usize) -> Vec<(usize, usize)> {
        let mut dofs = Vec::new();
        let mut current = link;
        while let Some(j) = self.links[current].parent_joint {
            let joint = &self.joints[j];
            if let Some(dof) = self.joint_dofs[j] {
                dofs.push((dof, joint.child_link));
            }
            current = joint.parent_link;
        }
        dofs
    }
}

/// Programmatic model construction; the URDF parser and the synthetic-model
/// generator both go through this.
#[derive(Debug, Default)]
pub struct ModelBuilder {
    name: String,
    links: Vec<String>,
    joints: Vec<JointSpec>,
}

#[derive(Debug, Clone)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    pub axis: Vector3<f64>,
    pub origin_xyz: Vector3<f64>,
    pub origin_rpy: Vector3<f64>,
    pub limits: Option<JointLimits>,
    pub vel_max: Option<f64>,
}

impl JointSpec {
    pub fn revolute(name: &str, parent: &str, child: &str, axis: Vector3<f64>) -> Self {
        JointSpec {
            name: name.to_string(),
            kind: JointKind::Revolute,
            parent: parent.to_string(),
            child: child.to_string(),
            axis,
            origin_xyz: Vector3::zeros(),
            origin_rpy: Vector3::zeros(),
            limits: Some(JointLimits {
                pos_min: -2.0,
                pos_max: 2.0,
            }),
            vel_max: None,
        }
    }

    pub fn continuous(name: &str, parent: &str, child: &str, axis: Vector3<f64>) -> Self {
        JointSpec {
            kind: JointKind::Continuous,
            limits: None,
            ..JointSpec::revolute(name, parent, child, axis)
        }
    }

    pub fn fixed(name: &str, parent: &str, child: &str) -> Self {
        JointSpec {
            kind: JointKind::Fixed,
            limits: None,
            ..JointSpec::revolute(name, parent, child, Vector3::x())
        }
    }

    pub fn with_origin(mut self, xyz: Vector3<f64>, rpy: Vector3<f64>) -> Self {
        self.origin_xyz = xyz;
        self.origin_rpy = rpy;
        self
    }

    pub fn with_limits(mut self, pos_min: f64, pos_max: f64) -> Self {
        self.limits = Some(JointLimits { pos_min, pos_max });
        self
    }

    pub fn with_vel_max(mut self, vel_max: f64) -> Self {
        self.vel_max = Some(vel_max);
        self
    }
}

impl ModelBuilder {
    pub fn new(name: &str) -> Self {
        ModelBuilder {
            name: name.to_string(),
            links: Vec::new(),
            joints: Vec::new(),
        }
    }

    pub fn link(mut self, name: &str) -> Self {
        self.links.push(name.to_string());
        self
    }

    pub fn joint(mut self, spec: JointSpec) -> Self {
        self.joints.push(spec);
        self
    }

    /// Validates the tree structure and freezes the model.
    ///
    /// Axis norms are not checked here ([`validate_model`] reports them);
    /// the URDF parser applies its own normalization policy first.
    pub fn build(self) -> Result<KinematicModel, ModelError> {
        let mut link_index = HashMap::new();
        let mut links = Vec::with_capacity(self.links.len());
        for name in &self.links {
            if link_index.insert(name.clone(), links.len()).is_some() {
                return Err(ModelError::DuplicateName { name: name.clone() });
            }
            links.push(Link {
                name: name.clone(),
                parent_joint: None,
            });
        }

        let mut joint_names = HashMap::new();
        let mut joints = Vec::with_capacity(self.joints.len());
        for spec in self.joints {
            if joint_names.insert(spec.name.clone(), ()).is_some() {
                return Err(ModelError::DuplicateName { name: spec.name });
            }
            let parent_link = *link_index.get(&spec.parent).ok_or_else(|| {
                ModelError::ModelInconsistent(format!(
                    "joint '{}' references undeclared parent link '{}'",
                    spec.name, spec.parent
                ))
            })?;
            let child_link = *link_index.get(&spec.child).ok_or_else(|| {
                ModelError::ModelInconsistent(format!(
                    "joint '{}' references undeclared child link '{}'",
                    spec.name, spec.child
                ))
            })?;
            if links[child_link].parent_joint.is_some() {
                return Err(ModelError::ModelInconsistent(format!(
                    "link '{}' has more than one parent joint",
                    spec.child
                )));
            }
            links[child_link].parent_joint = Some(joints.len());
            if spec.kind == JointKind::Revolute && spec.limits.is_none() {
                return Err(ModelError::MissingLimit { joint: spec.name });
            }
            joints.push(Joint {
                name: spec.name,
                kind: spec.kind,
                axis: spec.axis,
                origin_xyz: spec.origin_xyz,
                origin_rpy: spec.origin_rpy,
                origin_rotation: rotation_from_rpy(&spec.origin_rpy),
                limits: if spec.kind == JointKind::Revolute {
                    spec.limits
                } else {
                    None
                },
                vel_max: spec.vel_max.unwrap_or(DEFAULT_VEL_MAX),
                vel_max_defaulted: spec.vel_max.is_none(),
                parent_link,
                child_link,
            });
        }

        // Root: the unique link that is nobody's child.
        let roots: Vec<usize> = (0..links.len())
            .filter(|&i| links[i].parent_joint.is_none())
            .collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => {
                return Err(ModelError::CycleDetected {
                    link: links
                        .first()
                        .map(|l| l.name.clone())
                        .unwrap_or_else(|| "<empty>".to_string()),
                })
            }
            many => {
                return Err(ModelError::ModelInconsistent(format!(
                    "multiple root links: {}",
                    many.iter()
                        .map(|&i| links[i].name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )))
            }
        };

        // BFS from the root; every link must be reachable, otherwise the
        // unreachable part contains a cycle (each link has a single parent).
        let mut children: HashMap<usize, Vec<usize>> = HashMap::new();
        for (j, joint) in joints.iter().enumerate() {
            children.entry(joint.parent_link).or_default().push(j);
        }
        let mut topo_order = vec![root];
        let mut queue = std::collections::VecDeque::from([root]);
        let mut seen = vec![false; links.len()];
        seen[root] = true;
        while let Some(l) = queue.pop_front() {
            if let Some(js) = children.get(&l) {
                for &j in js {
                    let c = joints[j].child_link;
                    if seen[c] {
                        return Err(ModelError::CycleDetected {
                            link: links[c].name.clone(),
                        });
                    }
                    seen[c] = true;
                    topo_order.push(c);
                    queue.push_back(c);
                }
            }
        }
        if let Some(unseen) = seen.iter().position(|&s| !s) {
            return Err(ModelError::CycleDetected {
                link: links[unseen].name.clone(),
            });
        }

        let mut dof_order = Vec::new();
        let mut dof_joints = Vec::new();
        let mut joint_dofs = vec![None; joints.len()];
        for (j, joint) in joints.iter().enumerate() {
            if joint.kind.is_movable() {
                joint_dofs[j] = Some(dof_order.len());
                dof_order.push(joint.name.clone());
                dof_joints.push(j);
            }
        }

        Ok(KinematicModel {
            name: self.name,
            links,
            joints,
            root,
            dof_order,
            dof_joints,
            joint_dofs,
            link_index,
            topo_order,
        })
    }
}

/// A non-fatal finding from [`validate_model`].
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    /// `pos_min == pos_max`; the joint cannot move.
    DegenerateLimit { joint: String },
    /// Movable joint axis is not unit length.
    NonUnitAxis { joint: String, norm: f64 },
    /// Velocity limit was filled in with [`DEFAULT_VEL_MAX`].
    DefaultedVelocityLimit { joint: String },
    /// Velocity limit is not positive.
    NonPositiveVelocityLimit { joint: String, vel_max: f64 },
    /// `pos_min > pos_max`.
    InvertedLimit { joint: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DegenerateLimit { joint } => {
                write!(f, "joint '{joint}': pos_min equals pos_max, joint cannot move")
            }
            Self::NonUnitAxis { joint, norm } => write!(
                f,
                "joint '{joint}': axis norm is {norm} (normalize the axis to unit length)"
            ),
            Self::DefaultedVelocityLimit { joint } => write!(
                f,
                "joint '{joint}': no velocity limit given, defaulted to {DEFAULT_VEL_MAX} rad/s"
            ),
            Self::NonPositiveVelocityLimit { joint, vel_max } => {
                write!(f, "joint '{joint}': velocity limit {vel_max} is not positive")
            }
            Self::InvertedLimit { joint } => {
                write!(f, "joint '{joint}': pos_min exceeds pos_max")
            }
        }
    }
}

/// Checks the model invariants; an empty list means all of them hold.
pub fn validate_model(model: &KinematicModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for joint in model.joints() {
        if joint.kind.is_movable() {
            let norm = joint.axis.norm();
            if (norm - 1.0).abs() > 1e-9 {
                out.push(Diagnostic::NonUnitAxis {
                    joint: joint.name.clone(),
                    norm,
                });
            }
            if joint.vel_max_defaulted {
                out.push(Diagnostic::DefaultedVelocityLimit {
                    joint: joint.name.clone(),
                });
            }
            if joint.vel_max <= 0.0 {
                out.push(Diagnostic::NonPositiveVelocityLimit {
                    joint: joint.name.clone(),
                    vel_max: joint.vel_max,
                });
            }
        }
        if let Some(limits) = &joint.limits {
            if limits.pos_min == limits.pos_max {
                out.push(Diagnostic::DegenerateLimit {
                    joint: joint.name.clone(),
                });
            } else if limits.pos_min > limits.pos_max {
                out.push(Diagnostic::InvertedLimit {
                    joint: joint.name.clone(),
                });
            }
        }
    }
    out
}

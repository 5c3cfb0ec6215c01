//! Synthetic humanoid models and reference motion for testing and demos.
//!
//! `preset_model` builds humanoid-shaped kinematic trees at several sizes,
//! all sharing a canonical naming scheme (`pelvis`, `chest`, `head`,
//! `l_hand`, `r_hand`, `l_foot`, `r_foot`) so one correspondence file can
//! address any of them. `generate_synthetic_stream` drives a model's joints
//! with sinusoids and emits the resulting link orientation stream, with
//! angular velocities computed from the angular Jacobian rather than by
//! differencing frames.

use std::collections::BTreeMap;
use std::error::Error;
use std::f64::consts::TAU;
use std::fmt;

use nalgebra::Vector3;

use crate::kinematics::{angular_jacobian_at, forward_kinematics, SystemState, SystemVelocity};
use crate::model::{JointSpec, KinematicModel, ModelBuilder};
use crate::retarget::{LinkMotion, MotionFrame};

/// Link names shared by every preset, in a fixed reporting order.
pub const CANONICAL_LINKS: &[&str] = &[
    "pelvis", "chest", "head", "l_hand", "r_hand", "l_foot", "r_foot",
];

/// Names accepted by [`preset_model`].
pub const PRESET_NAMES: &[&str] = &["dof24", "dof30", "dof32", "dof66", "arms15"];

#[derive(Debug)]
pub enum HarnessError {
    UnknownPreset { name: String },
    /// A sinusoid would carry a joint outside its position limits.
    AmplitudeExceedsLimit {
        joint: String,
        amplitude: f64,
        bound: f64,
    },
    /// Joint spec count does not match the model's degrees of freedom.
    DimensionMismatch { expected: usize, actual: usize },
    UnknownLink { name: String },
    BadSpec(String),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::UnknownPreset { name } => {
                write!(f, "unknown model preset '{name}' (available: ")?;
                for (i, p) in PRESET_NAMES.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ")")
            }
            HarnessError::AmplitudeExceedsLimit {
                joint,
                amplitude,
                bound,
            } => write!(
                f,
                "joint '{joint}': amplitude {amplitude} exceeds the limit half-range {bound}"
            ),
            HarnessError::DimensionMismatch { expected, actual } => write!(
                f,
                "expected {expected} joint sinusoid specs, got {actual}"
            ),
            HarnessError::UnknownLink { name } => {
                write!(f, "stream requests unknown link '{name}'")
            }
            HarnessError::BadSpec(detail) => write!(f, "bad stream spec: {detail}"),
        }
    }
}

impl Error for HarnessError {}

/// Chain segment counts for one humanoid: torso, neck, each arm, each leg.
struct Layout {
    torso: usize,
    neck: usize,
    arm: usize,
    leg: usize,
}

/// Builds a humanoid-shaped model. `link_scale` multiplies every joint
/// origin translation (limb lengths) and nothing else, so two scales of the
/// same preset differ only in geometry, not in structure or joint axes.
pub fn preset_model(preset: &str, link_scale: f64) -> Result<KinematicModel, HarnessError> {
    if !(link_scale.is_finite() && link_scale > 0.0) {
        return Err(HarnessError::BadSpec(format!(
            "link scale must be positive, got {link_scale}"
        )));
    }
    let layout = match preset {
        "dof24" => Layout {
            torso: 2,
            neck: 2,
            arm: 5,
            leg: 5,
        },
        "dof30" => Layout {
            torso: 2,
            neck: 2,
            arm: 7,
            leg: 6,
        },
        "dof32" => Layout {
            torso: 3,
            neck: 3,
            arm: 7,
            leg: 6,
        },
        "dof66" => Layout {
            torso: 6,
            neck: 4,
            arm: 14,
            leg: 14,
        },
        "arms15" => Layout {
            torso: 0,
            neck: 1,
            arm: 7,
            leg: 0,
        },
        other => {
            return Err(HarnessError::UnknownPreset {
                name: other.to_string(),
            })
        }
    };

    let mut b = ModelBuilder::new(preset).link("pelvis");
    b = chain(
        b,
        "torso",
        "pelvis",
        "chest",
        layout.torso,
        link_scale,
        Vector3::new(0.01, 0.0, 0.12),
        Vector3::new(0.01, 0.0, 0.12),
    );
    b = chain(
        b,
        "neck",
        "chest",
        "head",
        layout.neck,
        link_scale,
        Vector3::new(0.0, 0.01, 0.09),
        Vector3::new(0.0, 0.01, 0.09),
    );
    for (prefix, hand, side) in [("l_arm", "l_hand", 1.0), ("r_arm", "r_hand", -1.0)] {
        b = chain(
            b,
            prefix,
            "chest",
            hand,
            layout.arm,
            link_scale,
            Vector3::new(0.0, side * 0.18, 0.08),
            Vector3::new(0.02, side * 0.015, -0.09),
        );
    }
    if layout.leg > 0 {
        for (prefix, foot, side) in [("l_leg", "l_foot", 1.0), ("r_leg", "r_foot", -1.0)] {
            b = chain(
                b,
                prefix,
                "pelvis",
                foot,
                layout.leg,
                link_scale,
                Vector3::new(0.01, side * 0.09, -0.06),
                Vector3::new(-0.01, 0.0, -0.11),
            );
        }
    }
    Ok(b.build().expect("preset layouts are valid trees"))
}

/// Appends a serial chain of `n` revolute joints from `base` to `terminal`,
/// cycling the joint axis through z, y, x. `n == 0` welds the terminal link
/// on with a fixed joint so the canonical link still exists.
fn chain(
    mut b: ModelBuilder,
    prefix: &str,
    base: &str,
    terminal: &str,
    n: usize,
    scale: f64,
    first: Vector3<f64>,
    rest: Vector3<f64>,
) -> ModelBuilder {
    let zero = Vector3::zeros();
    if n == 0 {
        b = b.link(terminal).joint(
            JointSpec::fixed(&format!("{prefix}_fix"), base, terminal)
                .with_origin(first * scale, zero),
        );
        return b;
    }
    let axes = [Vector3::z(), Vector3::y(), Vector3::x()];
    let mut parent = base.to_string();
    for i in 0..n {
        let child = if i + 1 == n {
            terminal.to_string()
        } else {
            format!("{prefix}_{i}")
        };
        let offset = if i == 0 { first } else { rest };
        b = b.link(&child).joint(
            JointSpec::revolute(&format!("{prefix}_j{i}"), &parent, &child, axes[i % 3])
                .with_origin(offset * scale, zero)
                .with_limits(-2.0, 2.0)
                .with_vel_max(10.0),
        );
        parent = child;
    }
    b
}

/// One joint's reference trajectory: `center + amplitude · sin(2π f t + phase)`
/// where `center` is the midpoint of the joint's position limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidSpec {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

/// Full description of a synthetic stream.
#[derive(Debug, Clone)]
pub struct StreamSpec {
    /// One entry per degree of freedom, in the model's joint order.
    pub joints: Vec<SinusoidSpec>,
    /// Stream length in seconds.
    pub duration: f64,
    /// Frames per second; frame `i` is stamped `i / rate`.
    pub rate: f64,
    /// Links to emit; empty means every link in the model.
    pub links: Vec<String>,
}

/// Deterministic per-joint variation so no two joints move identically:
/// amplitudes span [0.4, 1.0]·`amplitude` and frequencies [0.3, 1.0]·
/// `frequency_hz`, spread by low-discrepancy multiples of irrational steps.
pub fn default_sinusoids(
    model: &KinematicModel,
    amplitude: f64,
    frequency_hz: f64,
) -> Vec<SinusoidSpec> {
    let frac = |x: f64| x - x.floor();
    (0..model.n_dof())
        .map(|j| {
            let j = j as f64;
            SinusoidSpec {
                amplitude: amplitude * (0.4 + 0.6 * frac(j * 0.618_033_988_749_895)),
                frequency_hz: frequency_hz * (0.3 + 0.7 * frac(j * 0.381_966_011_250_105)),
                phase: TAU * frac(j * 0.754_877_666_246_693),
            }
        })
        .collect()
}

/// Samples the sinusoid joint trajectories and records each requested link's
/// orientation and angular velocity. Velocities come from the angular
/// Jacobian applied to the exact joint rates, so they are consistent with
/// the orientations by construction. The base stays at the identity pose.
pub fn generate_synthetic_stream(
    model: &KinematicModel,
    spec: &StreamSpec,
) -> Result<Vec<MotionFrame>, HarnessError> {
    if spec.joints.len() != model.n_dof() {
        return Err(HarnessError::DimensionMismatch {
            expected: model.n_dof(),
            actual: spec.joints.len(),
        });
    }
    if !(spec.rate.is_finite() && spec.rate > 0.0) {
        return Err(HarnessError::BadSpec(format!(
            "rate must be positive, got {}",
            spec.rate
        )));
    }
    if !(spec.duration.is_finite() && spec.duration >= 0.0) {
        return Err(HarnessError::BadSpec(format!(
            "duration must be non-negative, got {}",
            spec.duration
        )));
    }

    // Center each joint in its limit range and verify the sinusoid fits.
    let mut centers = Vec::with_capacity(model.n_dof());
    for (dof, sine) in spec.joints.iter().enumerate() {
        let joint = model.dof_joint(dof);
        match &joint.limits {
            Some(lim) => {
                let half = 0.5 * (lim.pos_max - lim.pos_min);
                if sine.amplitude.abs() > half + 1e-12 {
                    return Err(HarnessError::AmplitudeExceedsLimit {
                        joint: joint.name.clone(),
                        amplitude: sine.amplitude,
                        bound: half,
                    });
                }
                centers.push(0.5 * (lim.pos_min + lim.pos_max));
            }
            None => centers.push(0.0),
        }
    }

    let link_indices: Vec<usize> = if spec.links.is_empty() {
        (0..model.links().len()).collect()
    } else {
        spec.links
            .iter()
            .map(|name| {
                model
                    .link_index(name)
                    .ok_or_else(|| HarnessError::UnknownLink { name: name.clone() })
            })
            .collect::<Result<_, _>>()?
    };

    let n_frames = (spec.duration * spec.rate).round() as usize;
    let mut frames = Vec::with_capacity(n_frames);
    let mut state = SystemState::neutral(model);
    let mut vel = SystemVelocity::zero(model.n_dof());
    for i in 0..n_frames {
        let t = i as f64 / spec.rate;
        for (dof, sine) in spec.joints.iter().enumerate() {
            let w = TAU * sine.frequency_hz;
            state.s[dof] = centers[dof] + sine.amplitude * (w * t + sine.phase).sin();
            vel.s_dot[dof] = sine.amplitude * w * (w * t + sine.phase).cos();
        }
        let poses = forward_kinematics(model, &state).expect("generator state is consistent");
        let nu = vel.to_vector();
        let mut links = BTreeMap::new();
        for &idx in &link_indices {
            let jac = angular_jacobian_at(model, &poses, idx);
            let omega = &jac * &nu;
            links.insert(
                model.link_name(idx).to_string(),
                LinkMotion {
                    orientation: poses[idx].rotation,
                    angular_velocity: Vector3::new(omega[0], omega[1], omega[2]),
                },
            );
        }
        frames.push(MotionFrame { t, links });
    }
    Ok(frames)
}

/// The canonical links present in `model`, in reporting order. Presets with
/// no legs simply lack the foot entries.
pub fn canonical_links(model: &KinematicModel) -> Vec<String> {
    CANONICAL_LINKS
        .iter()
        .filter(|name| model.link_index(name).is_some())
        .map(|name| name.to_string())
        .collect()
}

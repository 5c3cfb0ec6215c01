//! Human→robot link correspondence.
//!
//! Each tracked robot link is tied to one human link through a constant
//! calibration rotation, fixed offline by posing both bodies in a similar
//! configuration. Per frame, the human link orientation is right-multiplied
//! by the calibration to produce the robot link's orientation target; the
//! angular-velocity target is the human value unchanged, since
//! right-multiplication by a constant leaves the inertial-frame angular
//! velocity invariant: d/dt(R_H C)(R_H C)ᵀ = Ṙ_H R_Hᵀ.
//!
//! Targets depend only on orientations, never on link lengths, so the same
//! correspondence works across differently sized humans.

use crate::model::KinematicModel;
use crate::so3::{Rotation, So3Error};
use nalgebra::{Matrix3, Vector3};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum RetargetError {
    MissingReferenceLink { link: String },
    MissingHumanLink { link: String },
    UnknownRobotLink { link: String },
    DuplicateRobotLink { link: String },
    BadWeight { robot_link: String, weight: f64 },
    BadQuaternionNorm { norm: f64 },
    BadFormat(String),
}

impl fmt::Display for RetargetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingReferenceLink { link } => {
                write!(f, "link '{link}' missing from a reference pose")
            }
            Self::MissingHumanLink { link } => {
                write!(f, "human link '{link}' missing from motion frame")
            }
            Self::UnknownRobotLink { link } => {
                write!(f, "robot link '{link}' does not exist in the model")
            }
            Self::DuplicateRobotLink { link } => {
                write!(f, "robot link '{link}' appears in more than one pair")
            }
            Self::BadWeight { robot_link, weight } => {
                write!(f, "pair for '{robot_link}' has non-positive weight {weight}")
            }
            Self::BadQuaternionNorm { norm } => {
                write!(f, "calibration quaternion norm {norm} is not 1")
            }
            Self::BadFormat(msg) => write!(f, "bad correspondence file: {msg}"),
        }
    }
}

impl std::error::Error for RetargetError {}

/// One tracked link: human source, robot destination, constant calibration
/// rotation and a positive objective weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondencePair {
    pub human_link: String,
    pub robot_link: String,
    pub calibration: Rotation,
    pub weight: f64,
}

/// Ordered list of correspondence pairs; robot links unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pairs: Vec<CorrespondencePair>,
}

impl CorrespondenceMap {
    pub fn new(pairs: Vec<CorrespondencePair>) -> Result<Self, RetargetError> {
        let mut seen = std::collections::HashSet::new();
        for p in &pairs {
            if !seen.insert(p.robot_link.clone()) {
                return Err(RetargetError::DuplicateRobotLink {
                    link: p.robot_link.clone(),
                });
            }
            if !(p.weight > 0.0) {
                return Err(RetargetError::BadWeight {
                    robot_link: p.robot_link.clone(),
                    weight: p.weight,
                });
            }
        }
        Ok(CorrespondenceMap { pairs })
    }

    pub fn pairs(&self) -> &[CorrespondencePair] {
        &self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks that every robot link exists in `model`.
    pub fn bind_to_model(&self, model: &KinematicModel) -> Result<(), RetargetError> {
        for p in &self.pairs {
            if model.link_index(&p.robot_link).is_none() {
                return Err(RetargetError::UnknownRobotLink {
                    link: p.robot_link.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Orientation and inertial-frame angular velocity of one human link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMotion {
    pub orientation: Rotation,
    pub angular_velocity: Vector3<f64>,
}

/// One timestamped sample of tracked human links.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    /// Timestamp (s); strictly increasing within a stream.
    pub t: f64,
    pub links: BTreeMap<String, LinkMotion>,
}

/// Per-robot-link tracking goal for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkTarget {
    pub robot_link: String,
    pub orientation: Rotation,
    pub angular_velocity: Vector3<f64>,
    pub weight: f64,
}

/// Targets for one frame, in correspondence-map order.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub t: f64,
    pub targets: Vec<LinkTarget>,
    /// Human links absent from the frame, dropped under the skip policy.
    pub skipped: Vec<String>,
}

/// What to do when a mapped human link is absent from a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingLinkPolicy {
    /// Fail the frame. The default: silent dropping hides sensor faults.
    #[default]
    Strict,
    /// Drop that link's target for this frame and record it in `skipped`.
    Skip,
}

/// Fixes the per-pair calibration rotations from one shared reference pose:
/// `calibration = human_refᵀ · robot_ref`, so applying the map to the human
/// reference reproduces the robot reference exactly.
pub fn calibrate(
    human_ref: &BTreeMap<String, Rotation>,
    robot_ref: &BTreeMap<String, Rotation>,
    pairs: &[(String, String)],
) -> Result<CorrespondenceMap, RetargetError> {
    let mut out = Vec::with_capacity(pairs.len());
    for (human_link, robot_link) in pairs {
        let rh = human_ref
            .get(human_link)
            .ok_or_else(|| RetargetError::MissingReferenceLink {
                link: human_link.clone(),
            })?;
        let rr = robot_ref
            .get(robot_link)
            .ok_or_else(|| RetargetError::MissingReferenceLink {
                link: robot_link.clone(),
            })?;
        out.push(CorrespondencePair {
            human_link: human_link.clone(),
            robot_link: robot_link.clone(),
            calibration: rh.inverse() * *rr,
            weight: 1.0,
        });
    }
    CorrespondenceMap::new(out)
}

/// Applies the correspondence to one frame: orientation target
/// `R_H · calibration`, angular-velocity target passed through.
pub fn compute_targets(
    frame: &MotionFrame,
    map: &CorrespondenceMap,
    policy: MissingLinkPolicy,
) -> Result<TargetSet, RetargetError> {
    let mut targets = Vec::with_capacity(map.pairs().len());
    let mut skipped = Vec::new();
    for pair in map.pairs() {
        match frame.links.get(&pair.human_link) {
            Some(motion) => targets.push(LinkTarget {
                robot_link: pair.robot_link.clone(),
                orientation: motion.orientation * pair.calibration,
                angular_velocity: motion.angular_velocity,
                weight: pair.weight,
            }),
            None => match policy {
                MissingLinkPolicy::Strict => {
                    return Err(RetargetError::MissingHumanLink {
                        link: pair.human_link.clone(),
                    })
                }
                MissingLinkPolicy::Skip => skipped.push(pair.human_link.clone()),
            },
        }
    }
    Ok(TargetSet {
        t: frame.t,
        targets,
        skipped,
    })
}

// --- correspondence file ----------------------------------------------------
//
// TOML with one [[pair]] table per correspondence:
//
//   [[pair]]
//   human_link = "Pelvis"
//   robot_link = "base"
//   calibration = [ ...9 row-major matrix entries... ]
//   weight = 1e0
//
// `calibration` is written as 9 row-major entries; on load, 4 entries are
// also accepted and read as a unit quaternion (w, x, y, z). All floats carry
// 17 significant digits so values survive a save→load round trip bit-exactly.

#[derive(serde::Deserialize)]
struct PairFile {
    #[serde(default)]
    pair: Vec<PairEntry>,
}

#[derive(serde::Deserialize)]
struct PairEntry {
    human_link: String,
    robot_link: String,
    calibration: Vec<f64>,
    weight: Option<f64>,
}

pub fn load_correspondence(text: &str) -> Result<CorrespondenceMap, RetargetError> {
    let file: PairFile =
        toml::from_str(text).map_err(|e| RetargetError::BadFormat(e.to_string()))?;
    let mut pairs = Vec::with_capacity(file.pair.len());
    for entry in file.pair {
        let calibration = match entry.calibration.as_slice() {
            [w, x, y, z] => Rotation::from_quaternion(*w, *x, *y, *z).map_err(|e| match e {
                So3Error::BadQuaternionNorm { norm } => {
                    RetargetError::BadQuaternionNorm { norm }
                }
                other => RetargetError::BadFormat(other.to_string()),
            })?,
            m @ [_, _, _, _, _, _, _, _, _] => {
                Rotation::from_matrix(Matrix3::from_row_slice(m)).map_err(|e| {
                    RetargetError::BadFormat(format!(
                        "pair for '{}': {e}",
                        entry.robot_link
                    ))
                })?
            }
            other => {
                return Err(RetargetError::BadFormat(format!(
                    "pair for '{}': calibration needs 4 (quaternion) or 9 (matrix) entries, got {}",
                    entry.robot_link,
                    other.len()
                )))
            }
        };
        pairs.push(CorrespondencePair {
            human_link: entry.human_link,
            robot_link: entry.robot_link,
            calibration,
            weight: entry.weight.unwrap_or(1.0),
        });
    }
    CorrespondenceMap::new(pairs)
}

pub fn save_correspondence(map: &CorrespondenceMap) -> String {
    let mut out = String::new();
    for pair in map.pairs() {
        out.push_str("[[pair]]\n");
        out.push_str(&format!("human_link = {}\n", toml_string(&pair.human_link)));
        out.push_str(&format!("robot_link = {}\n", toml_string(&pair.robot_link)));
        let m = pair.calibration.matrix();
        let entries: Vec<String> = m
            .row_iter()
            .flat_map(|row| row.iter().map(|x| fmt17(*x)).collect::<Vec<_>>())
            .collect();
        out.push_str(&format!("calibration = [{}]\n", entries.join(", ")));
        out.push_str(&format!("weight = {}\n\n", fmt17(pair.weight)));
    }
    out
}

/// 17 significant digits: enough to reproduce any f64 bit pattern on parse.
fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

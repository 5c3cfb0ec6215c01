//! Stream-run configuration.
//!
//! A run is described by a small TOML file; every field except `model` and
//! `correspondence` has a default. Solver settings live in an `[ik]` table
//! mirroring [`IkParams`]:
//!
//! ```toml
//! model = "robot.urdf"            # or "preset:dof32", "preset:dof66@2.0"
//! correspondence = "map.toml"
//! input = "human.jsonl"
//! output = "run.csv"
//! rate = 200.0
//! smoothing_time = 0.0            # seconds; 0 disables output smoothing
//! missing_link = "strict"         # or "skip"
//!
//! [ik]
//! gain = 10.0
//! lambda = 1e-3
//! fixed_base = false
//! ```
//!
//! Model references are either a URDF path or `preset:<name>[@<scale>]`,
//! resolved by the built-in humanoid generator.

use std::error::Error;
use std::fmt;
use std::fs;

use serde::Deserialize;

use crate::ik::IkParams;
use crate::model::{parse_urdf, KinematicModel, ModelError};
use crate::pipeline::harness::{preset_model, HarnessError};
use crate::retarget::MissingLinkPolicy;

#[derive(Debug)]
pub enum ConfigError {
    /// TOML syntax or schema problem.
    Parse(String),
    /// Structurally valid but semantically unusable value.
    BadValue(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse(detail) => write!(f, "config parse error: {detail}"),
            ConfigError::BadValue(detail) => write!(f, "config error: {detail}"),
        }
    }
}

impl Error for ConfigError {}

fn default_rate() -> f64 {
    200.0
}

/// Everything needed to run a stream through one robot.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    /// URDF path or `preset:<name>[@<scale>]`.
    #[serde(default)]
    pub model: String,
    /// Correspondence TOML path.
    #[serde(default)]
    pub correspondence: String,
    /// Input stream path; optional because live input supplies frames.
    #[serde(default)]
    pub input: Option<String>,
    /// CSV output path; `None` writes to standard output.
    #[serde(default)]
    pub output: Option<String>,
    /// Nominal frame rate (Hz); sets the first frame's integration step.
    #[serde(default = "default_rate")]
    pub rate: f64,
    /// Minimum-jerk smoothing window for the reported joint positions;
    /// 0 (the default) passes solver output through untouched.
    #[serde(default)]
    pub smoothing_time: f64,
    #[serde(default)]
    pub missing_link: MissingLinkPolicy,
    #[serde(default)]
    pub ik: IkParams,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            model: String::new(),
            correspondence: String::new(),
            input: None,
            output: None,
            rate: default_rate(),
            smoothing_time: 0.0,
            missing_link: MissingLinkPolicy::default(),
            ik: IkParams::default(),
        }
    }
}

impl StreamConfig {
    /// Parses without validating, so callers may overlay values (CLI flags)
    /// before calling [`StreamConfig::validate`].
    pub fn parse_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Parses a complete, self-contained configuration.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config = Self::parse_toml(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model.is_empty() {
            return Err(ConfigError::BadValue("model must be set".to_string()));
        }
        if self.correspondence.is_empty() {
            return Err(ConfigError::BadValue(
                "correspondence must be set".to_string(),
            ));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(ConfigError::BadValue(format!(
                "rate must be positive, got {}",
                self.rate
            )));
        }
        if !(self.smoothing_time.is_finite() && self.smoothing_time >= 0.0) {
            return Err(ConfigError::BadValue(format!(
                "smoothing_time must be non-negative, got {}",
                self.smoothing_time
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum ModelRefError {
    Io { path: String, detail: String },
    Urdf(ModelError),
    Preset(HarnessError),
    BadScale { text: String },
}

impl fmt::Display for ModelRefError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelRefError::Io { path, detail } => write!(f, "cannot read '{path}': {detail}"),
            ModelRefError::Urdf(e) => write!(f, "model file: {e}"),
            ModelRefError::Preset(e) => write!(f, "model preset: {e}"),
            ModelRefError::BadScale { text } => {
                write!(f, "bad preset scale '{text}' (expected a number)")
            }
        }
    }
}

impl Error for ModelRefError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            ModelRefError::Urdf(e) => Some(e),
            ModelRefError::Preset(e) => Some(e),
            _ => None,
        }
    }
}

/// Resolves a model reference: `preset:<name>[@<scale>]` builds a synthetic
/// humanoid, anything else is read as a URDF file.
pub fn load_model_ref(reference: &str) -> Result<KinematicModel, ModelRefError> {
    if let Some(rest) = reference.strip_prefix("preset:") {
        let (name, scale) = match rest.split_once('@') {
            Some((name, scale_text)) => {
                let scale = scale_text
                    .parse::<f64>()
                    .map_err(|_| ModelRefError::BadScale {
                        text: scale_text.to_string(),
                    })?;
                (name, scale)
            }
            None => (rest, 1.0),
        };
        return preset_model(name, scale).map_err(ModelRefError::Preset);
    }
    let text = fs::read_to_string(reference).map_err(|e| ModelRefError::Io {
        path: reference.to_string(),
        detail: e.to_string(),
    })?;
    parse_urdf(&text).map_err(ModelRefError::Urdf)
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::flow::{FlowOptions, InitGrid, OuterBc, SnapshotPolicy};
use crate::profiles::{Profile, ProfileSpec};
use crate::{Error, Result};

/// One experiment: a profile, a grid, flow settings, oracles and an optional sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub profile_spec: ProfileSpec,
    pub n: usize,
    pub grid: GridConfig,
    pub flow: FlowConfig,
    #[serde(default)]
    pub oracles: Vec<OracleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "N")]
    pub cells: usize,
    #[serde(rename = "X")]
    pub x_end: f64,
    /// First-cell arclength of a sinh-graded grid; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tip_spacing: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub t_end: f64,
    #[serde(default = "default_cadence")]
    pub cadence: u64,
    pub bc_outer: OuterBc,
    #[serde(default)]
    pub remesh_threshold: Option<f64>,
    #[serde(default)]
    pub tip_resolution: Option<f64>,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: SnapshotPolicy,
    #[serde(default)]
    pub max_steps: Option<u64>,
    /// Clamp `t_end` for cylinder caps to `0.4·(ε/2)²/(2(n−1))`, clear of
    /// tail extinction.
    #[serde(default)]
    pub tail_guard: bool,
}

fn default_cfl() -> f64 {
    0.1
}

fn default_cadence() -> u64 {
    10
}

fn default_checkpoints() -> SnapshotPolicy {
    SnapshotPolicy { every: 10, burst: 3 }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleName {
    FsEvolutionResidual,
    PhiBarrier,
    Supersolution,
    RicciPinch,
    DistanceDistortion,
}

impl OracleName {
    pub const ALL: [OracleName; 5] = [
        OracleName::FsEvolutionResidual,
        OracleName::PhiBarrier,
        OracleName::Supersolution,
        OracleName::RicciPinch,
        OracleName::DistanceDistortion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OracleName::FsEvolutionResidual => "fs_evolution_residual",
            OracleName::PhiBarrier => "phi_barrier",
            OracleName::Supersolution => "supersolution",
            OracleName::RicciPinch => "ricci_pinch",
            OracleName::DistanceDistortion => "distance_distortion",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.as_str() == text)
            .ok_or_else(|| Error::Usage(format!("unknown oracle `{text}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub name: OracleName,
    #[serde(default = "one")]
    pub tolerance_scale: f64,
    /// Barrier level for `phi_barrier`; defaults to the initial `min f_s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl OracleConfig {
    pub fn new(name: OracleName) -> Self {
        OracleConfig { name, tolerance_scale: 1.0, delta: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "k")]
    K,
    #[serde(rename = "eps", alias = "ε")]
    Eps,
    #[serde(rename = "N")]
    Cells,
    #[serde(rename = "v")]
    Slope,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::K => "k",
            SweepParameter::Eps => "eps",
            SweepParameter::Cells => "N",
            SweepParameter::Slope => "v",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

fn parse_error(path: String, message: impl Into<String>) -> Error {
    Error::Parse { path, message: message.into() }
}

impl ExperimentConfig {
    /// Parse and validate; unknown keys anywhere are reported with their path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| parse_error(e.path().to_string(), e.inner().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Canonical serialization; this is the byte string that gets hashed.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let config = |m: String| Err(Error::Configuration(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return config(format!("name `{}` is not usable as a directory name", self.name));
        }
        self.profile()?;
        if self.grid.cells < 64 {
            return config(format!("grid.N must be at least 64, got {}", self.grid.cells));
        }
        if !(self.flow.t_end > 0.0) {
            return config(format!("flow.t_end must be positive, got {}", self.flow.t_end));
        }
        if self.flow.cadence == 0 {
            return config("flow.cadence must be at least 1".into());
        }
        self.flow_options().validate()?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.len() < 3 {
                return config(format!("a sweep needs at least 3 values, got {}", sweep.values.len()));
            }
            for &v in &sweep.values {
                self.member(sweep.parameter, v)?;
            }
        }
        Ok(())
    }

    /// Build the profile, with parse paths rooted at `profile_spec`.
    pub fn profile(&self) -> Result<Profile> {
        let mut spec = self.profile_spec.clone();
        match spec.fiber_dim {
            None => spec.fiber_dim = Some(self.n),
            Some(d) if d != self.n => {
                return Err(Error::Configuration(format!("profile_spec.fiber_dim = {d} disagrees with n = {}", self.n)))
            }
            Some(_) => {}
        }
        let built = spec.build();
        built.map_err(|e| match e {
            Error::Parse { path, message } => parse_error(format!("profile_spec.{path}"), message),
            other => other,
        })
    }

    pub fn init_grid(&self) -> InitGrid {
        match self.grid.tip_spacing {
            Some(tip_spacing) => InitGrid::Graded { tip_spacing },
            None => InitGrid::Uniform,
        }
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            cfl: self.flow.cfl,
            cadence: self.flow.cadence,
            remesh_threshold: self.flow.remesh_threshold,
            tip_resolution: self.flow.tip_resolution,
            snapshots: Some(self.flow.checkpoints),
            max_steps: self.flow.max_steps,
            ..Default::default()
        }
    }

    /// `t_end`, clamped by the tail guard when it applies.
    pub fn horizon(&self) -> f64 {
        let t = self.flow.t_end;
        if !self.flow.tail_guard || self.profile_spec.kind != "cap_cylinder" {
            return t;
        }
        match self.profile_spec.params.get("eps").and_then(Value::as_f64) {
            Some(eps) if self.n >= 2 => t.min(0.4 * (eps / 2.0).powi(2) / (2.0 * (self.n as f64 - 1.0))),
            _ => t,
        }
    }

    /// The sweep member with `parameter = value`, named after it.
    pub fn member(&self, parameter: SweepParameter, value: f64) -> Result<ExperimentConfig> {
        let mut next = self.clone();
        next.sweep = None;
        next.name = format!("{}_{}={}", self.name, parameter.as_str(), value);
        let missing = |key: &str| {
            Error::Configuration(format!("profile kind `{}` has no parameter `{key}` to sweep", self.profile_spec.kind))
        };
        match parameter {
            SweepParameter::Cells => {
                if !(value >= 64.0 && value.fract() == 0.0) {
                    return Err(Error::Configuration(format!("N sweep values must be integers ≥ 64, got {value}")));
                }
                next.grid.cells = value as usize;
            }
            SweepParameter::K | SweepParameter::Eps => {
                let key = parameter.as_str();
                let slot = next.profile_spec.params.get_mut(key).ok_or_else(|| missing(key))?;
                *slot = Value::from(value);
            }
            SweepParameter::Slope => {
                let params = &mut next.profile_spec.params;
                let mut touched = false;
                if let Some(slot) = params.get_mut("v") {
                    *slot = Value::from(value);
                    touched = true;
                }
                // A cone base has to carry the same slope as the smoothing.
                if let Some(base) = params.get_mut("base") {
                    if base.get("kind").and_then(Value::as_str) == Some("cone") {
                        if let Some(slot) = base.pointer_mut("/params/slope") {
                            *slot = Value::from(value);
                            touched = true;
                        }
                    }
                }
                if self.profile_spec.kind == "cone" {
                    if let Some(slot) = params.get_mut("slope") {
                        *slot = Value::from(value);
                        touched = true;
                    }
                }
                if !touched {
                    return Err(missing("v"));
                }
                if let OuterBc::LinearSlope { .. } = next.flow.bc_outer {
                    next.flow.bc_outer = OuterBc::LinearSlope { slope: value };
                }
            }
        }
        next.profile()?;
        Ok(next)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

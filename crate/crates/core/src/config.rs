//! JSON deployment/experiment configuration.
//!
//! Unknown keys are rejected everywhere. `workspace`, `anchors`, `profile`,
//! `trust` and `chain` are required; `kalman` and `experiment` fall back to
//! the testbed defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{DeploymentSpec, DEFAULT_MARGIN};
use crate::bench::{DEFAULT_DISTANCES, DEFAULT_SAMPLES, DEFAULT_TRIALS};
use crate::kalman::{FilterSetup, InitPolicy, KalmanModel};
use crate::ledger::{ChainConfig, TrustList};
use crate::localization::{check_unique_ids, Anchor, Workspace};
use crate::radio::{RadioProfile, Technology};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    /// serde_json messages carry the line and column.
    #[error("{origin}: {source}")]
    Parse { origin: String, source: serde_json::Error },
    #[error("{origin}: invalid `{field}`: {reason}")]
    Invalid { origin: String, field: &'static str, reason: String },
}

/// Either a built-in technology name or a full calibration override.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(Technology),
    Custom(RadioProfile),
}

impl ProfileSpec {
    pub fn resolve(&self) -> RadioProfile {
        match self {
            ProfileSpec::Named(t) => RadioProfile::builtin(*t),
            ProfileSpec::Custom(p) => *p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanConfig {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub u: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub x0_policy: InitPolicy,
    /// `null` means P0 = R.
    #[serde(rename = "P0")]
    pub p0: Option<f64>,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        let m = KalmanModel::default();
        Self { a: m.a, b: m.b, u: m.u, q: m.q, h: m.h, r: m.r, x0_policy: InitPolicy::FirstMeasurement, p0: None }
    }
}

impl KalmanConfig {
    pub fn setup(&self) -> FilterSetup {
        FilterSetup {
            model: KalmanModel { a: self.a, b: self.b, u: self.u, q: self.q, h: self.h, r: self.r },
            init: self.x0_policy,
            p0: self.p0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub distances: Vec<f64>,
    pub n_samples: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { distances: DEFAULT_DISTANCES.to_vec(), n_samples: DEFAULT_SAMPLES, trials: DEFAULT_TRIALS, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub workspace: Workspace,
    pub anchors: Vec<Anchor>,
    pub profile: ProfileSpec,
    pub trust: TrustList,
    pub chain: ChainConfig,
    #[serde(default)]
    pub kalman: KalmanConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl Default for Config {
    /// The 4 x 3 m testbed with corner anchors, WiFi and a private ledger.
    fn default() -> Self {
        let workspace = Workspace::default();
        Self {
            anchors: workspace.corner_anchors(),
            workspace,
            profile: ProfileSpec::Named(Technology::WiFi),
            trust: TrustList::new(),
            chain: ChainConfig::private(),
            kalman: KalmanConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|source| ConfigError::Parse { origin: origin.to_owned(), source })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: origin.clone(), source })?;
        Self::from_json(&text, &origin)
    }

    /// Canonical pretty JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self, origin: &str) -> Result<(), ConfigError> {
        let invalid = |field: &'static str, reason: String| ConfigError::Invalid { origin: origin.to_owned(), field, reason };
        self.workspace.validate().map_err(|e| invalid("workspace", e.to_string()))?;
        if self.anchors.len() < 3 {
            return Err(invalid("anchors", format!("need at least 3 anchors, got {}", self.anchors.len())));
        }
        check_unique_ids(&self.anchors).map_err(|e| invalid("anchors", e.to_string()))?;
        if let Some(a) = self.anchors.iter().find(|a| !self.workspace.contains(a.x, a.y, 0.0)) {
            return Err(invalid("anchors", format!("anchor `{}` lies outside the workspace", a.id)));
        }
        self.profile.resolve().validate().map_err(|e| invalid("profile", e.to_string()))?;
        self.chain.validate().map_err(|e| invalid("chain", e.to_string()))?;
        self.kalman.setup().model.validate().map_err(|e| invalid("kalman", e.to_string()))?;
        if let Some(p0) = self.kalman.p0 {
            if !(p0 >= 0.0 && p0.is_finite()) {
                return Err(invalid("kalman", format!("P0 must be non-negative, got {p0}")));
            }
        }
        let exp = &self.experiment;
        if let Some(d) = exp.distances.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(invalid("experiment", format!("distances must be positive, got {d}")));
        }
        if exp.n_samples == 0 {
            return Err(invalid("experiment", "n_samples must be at least 1".into()));
        }
        if exp.trials == 0 {
            return Err(invalid("experiment", "trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Profiles for the RSSI experiment: the three built-ins, with the
    /// configured profile replacing the built-in of the same technology.
    pub fn experiment_profiles(&self) -> Vec<RadioProfile> {
        let chosen = self.profile.resolve();
        Technology::ALL
            .iter()
            .map(|&t| if t == chosen.name { chosen } else { RadioProfile::builtin(t) })
            .collect()
    }

    pub fn deployment_spec(&self) -> DeploymentSpec {
        DeploymentSpec {
            workspace: self.workspace,
            anchors: self.anchors.clone(),
            profile: self.profile.resolve(),
            trust: self.trust.clone(),
            chain: self.chain,
            filter: self.kalman.setup(),
            samples_per_request: self.experiment.n_samples,
            margin: DEFAULT_MARGIN,
        }
    }
}

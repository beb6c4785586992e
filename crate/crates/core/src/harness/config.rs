//! Experiment configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::presets::{builtin_presets, ExperimentPreset};
use crate::error::{GdtError, Result};
use crate::train::TrainConfig;
use crate::world::WorldConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Videos sampled per batch.
    #[serde(default = "default_k_identity")]
    pub k_identity: usize,
    /// Extra presets; a name that matches a built-in replaces it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub presets: Vec<ExperimentPreset>,
}

fn default_temperature() -> f64 {
    0.07
}

fn default_k_identity() -> usize {
    32
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            world: WorldConfig::default(),
            train: TrainConfig::default(),
            temperature: default_temperature(),
            k_identity: default_k_identity(),
            presets: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| GdtError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GdtError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(GdtError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.world.validate()?;
        self.train.validate()?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GdtError::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.k_identity == 0 || self.k_identity > self.world.n_identities {
            return Err(GdtError::Config(format!(
                "k_identity = {} with {} identities",
                self.k_identity, self.world.n_identities
            )));
        }
        Ok(())
    }

    pub fn preset(&self, name: &str) -> Result<ExperimentPreset> {
        self.presets
            .iter()
            .rev()
            .find(|p| p.name == name)
            .cloned()
            .or_else(|| builtin_presets().into_iter().find(|p| p.name == name))
            .ok_or_else(|| GdtError::Config(format!("unknown preset `{name}`")))
    }

    /// Lowercase hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("config serializes"))
    }
}

/// Everything that determines a single run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedRun {
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub temperature: f64,
    pub k_identity: usize,
    pub preset: ExperimentPreset,
    pub seed: u64,
}

impl ResolvedRun {
    pub fn new(cfg: &ExperimentConfig, preset_name: &str, seed: u64) -> Result<Self> {
        let preset = cfg.preset(preset_name)?;
        let world = preset.world.clone().unwrap_or_else(|| cfg.world.clone());
        world.validate()?;
        Ok(Self {
            world,
            train: cfg.train,
            temperature: cfg.temperature,
            k_identity: cfg.k_identity,
            preset,
            seed,
        })
    }

    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("run serializes"))
    }
}

fn hash_json(v: &serde_json::Value) -> String {
    // serde_json's default map keeps keys sorted, so this form is canonical.
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

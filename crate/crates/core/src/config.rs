//! Run configuration: one TOML file with `sim`, `model`, `train` and `eval`
//! sections. Absent fields take their defaults; unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{AblationConfig, CsvSchema};
use crate::model::ModelConfig;
use crate::sim::SimConfig;
use crate::training::{SearchRanges, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ablation: AblationConfig,
    pub search: SearchRanges,
    pub search_trials: usize,
    pub ingest: CsvSchema,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ablation: AblationConfig::default(),
            search: SearchRanges::default(),
            search_trials: 20,
            ingest: CsvSchema::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.sim.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.eval.ablation.validate(&self.sim).map_err(|e| invalid(&e))?;
        if self.eval.search_trials == 0 {
            return Err(ConfigError::Invalid("eval.search_trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses and validates TOML text. Errors carry the dotted key path.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
            path: "<root>".into(),
            message: e.message().to_string(),
        })?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Hex SHA-256 of the resolved config, so equal configs hash equally
    /// however they were written.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Hex SHA-256 of a value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configs serialise to JSON");
    hex::encode(Sha256::digest(&json))
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    RunConfig::from_toml(&text)
}

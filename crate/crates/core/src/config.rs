//! Run configuration: one JSON document for every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::SweepConfig;
use crate::data::GenConfig;
use crate::pipeline::{DownstreamConfig, ModelConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Where the dataset comes from: a directory written by `gen-data`, or the
/// generator settings to build one in memory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub generator: GenConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub table: Option<PathBuf>,
    pub reports: PathBuf,
    pub checkpoints: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { table: None, reports: PathBuf::from("reports"), checkpoints: PathBuf::from("checkpoints") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seed of every section when resolved.
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub downstream: DownstreamConfig,
    pub cost: SweepConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Copies the global seed into every section.
    pub fn resolved(mut self) -> Self {
        self.train.seed = self.seed;
        self.downstream.seed = self.seed;
        self.cost.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.data.generator.validate().map_err(|e| invalid(&e))?;
        let c = &self.cost;
        if c.ks.is_empty() || c.ms.is_empty() || c.ks.iter().chain(&c.ms).any(|&v| v == 0) {
            return Err(ConfigError::Invalid("cost.ks and cost.ms need positive entries".into()));
        }
        if c.n == 0 || c.users == 0 || c.pool_size == Some(0) || c.vocab_size < 2 {
            return Err(ConfigError::Invalid("cost.n, cost.users, cost.pool_size must be positive".into()));
        }
        if let Some(p) = c.pool_size {
            let max_distinct = (c.vocab_size - 1) as f64;
            if c.ks.iter().any(|&k| max_distinct.powi(k.min(1000) as i32) < p as f64) {
                return Err(ConfigError::Invalid("cost.pool_size exceeds the number of distinct behaviors".into()));
            }
        }
        let sweep_stack = crate::nn::StackConfig {
            d: c.d,
            heads: c.heads,
            l_low: c.l_low,
            l_high: c.l_high,
            vocab_size: c.vocab_size,
            ..Default::default()
        };
        sweep_stack.validate().map_err(|e| invalid(&e))?;
        let dc = &self.downstream;
        if dc.id_dim == 0 || dc.epochs == 0 || dc.batch_size == 0 || dc.hidden.contains(&0) {
            return Err(ConfigError::Invalid("downstream sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Parses and validates a JSON config; unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg.resolved())
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

pub fn to_json(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(parse_config("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [r#"{"sed": 1}"#, r#"{"model": {"depth": 3}}"#, r#"{"train": {"lr": 0.1, "momentum": 0.9}}"#] {
            assert!(matches!(parse_config(doc), Err(ConfigError::Parse(_))), "{doc}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for doc in [
            r#"{"model": {"d": 10, "heads": 4}}"#,
            r#"{"train": {"batch_size": 0}}"#,
            r#"{"cost": {"ks": []}}"#,
            r#"{"data": {"generator": {"n_domains": 0}}}"#,
        ] {
            assert!(matches!(parse_config(doc), Err(ConfigError::Invalid(_))), "{doc}");
        }
    }

    #[test]
    fn global_seed_propagates_and_roundtrips() {
        let cfg = parse_config(r#"{"seed": 42, "train": {"mode": "fp_abe", "lr": 0.0005}}"#).unwrap();
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.cost.seed, 42);
        assert_eq!(parse_config(&to_json(&cfg)).unwrap(), cfg);
    }
}

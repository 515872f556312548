//! Experiment configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spex_core::executor::{Flags, SpexConfig};
use spex_core::sim::workload::WorkloadSpec;
use spex_core::{HardwareProfile, PolicyConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl ToString) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

/// Grid for the `sweep` verb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub batch_sizes: Vec<u32>,
    /// Flag sets such as `"t1,t2"` or `"none"`; empty means the configured flags.
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form label copied into reports.
    #[serde(default = "default_name")]
    pub name: String,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default = "HardwareProfile::memory_bound_7b")]
    pub hardware: HardwareProfile,
    #[serde(default)]
    pub spex: SpexConfig,
    /// Queries served concurrently.
    #[serde(default = "one")]
    pub batch_size: u32,
    #[serde(default = "default_queries")]
    pub num_queries: u32,
    #[serde(default)]
    pub seed: u64,
    /// Repetition `i` uses seed `seed + i`.
    #[serde(default = "one")]
    pub repetitions: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_name() -> String {
    "experiment".into()
}

fn one() -> u32 {
    1
}

fn default_queries() -> u32 {
    8
}

impl ExperimentConfig {
    pub fn new(policy: PolicyConfig) -> Self {
        Self {
            name: default_name(),
            policy,
            workload: WorkloadSpec::default(),
            hardware: HardwareProfile::memory_bound_7b(),
            spex: SpexConfig::default(),
            batch_size: 1,
            num_queries: default_queries(),
            seed: 0,
            repetitions: 1,
            sweep: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy
            .validate()
            .map_err(|e| ConfigError::invalid("policy", e))?;
        self.workload
            .validate()
            .map_err(|e| ConfigError::invalid("workload", e))?;
        self.hardware
            .validate()
            .map_err(|e| ConfigError::invalid("hardware", e))?;
        self.spex.validate().map_err(|e| ConfigError::invalid("spex", e))?;
        if self.batch_size == 0 {
            return Err(ConfigError::invalid("batch_size", "must be >= 1"));
        }
        if self.num_queries == 0 {
            return Err(ConfigError::invalid("num_queries", "must be >= 1"));
        }
        if self.repetitions == 0 {
            return Err(ConfigError::invalid("repetitions", "must be >= 1"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.batch_sizes.is_empty() || sweep.batch_sizes.contains(&0) {
                return Err(ConfigError::invalid("sweep.batch_sizes", "need at least one size, all >= 1"));
            }
            for f in &sweep.flags {
                parse_flags(f).map_err(|m| ConfigError::invalid("sweep.flags", m))?;
            }
        }
        Ok(())
    }

    /// Seeds of the repetitions, in order.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

/// Parses `t1,t2,t3` style flag lists; `none` or an empty string clears all.
pub fn parse_flags(text: &str) -> Result<Flags, String> {
    let mut flags = Flags::NONE;
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.to_ascii_lowercase().as_str() {
            "t1" => flags.t1 = true,
            "t2" => flags.t2 = true,
            "t3" => flags.t3 = true,
            "none" => {}
            "all" => flags = Flags::ALL,
            other => return Err(format!("unknown flag `{other}` (expected t1, t2, t3, all or none)")),
        }
    }
    Ok(flags)
}

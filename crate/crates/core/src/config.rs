//! Declarative run configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisor::{AdviseOptions, CostModel};
use crate::miner::{MinerConfig, WindowSet};
use crate::powerflow::SecurityCriterion;
use crate::scenario::{HistoryConfig, SamplingConfig};
use crate::surrogate::{TrainConfig, DEFAULT_MARGIN};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerSection {
    /// `default` or a comma-separated list of labels such as `45min, 1h30`.
    pub windows: String,
    pub max_cardinality: usize,
}

impl Default for MinerSection {
    fn default() -> Self {
        MinerSection {
            windows: "default".into(),
            max_cardinality: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningSection {
    pub margin: f64,
}

impl Default for ScreeningSection {
    fn default() -> Self {
        ScreeningSection {
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Overrides the seed of every stochastic stage when set.
    pub seed: Option<u64>,
    pub criterion: SecurityCriterion,
    pub miner: MinerSection,
    pub sampling: SamplingConfig,
    pub history: HistoryConfig,
    pub training: TrainConfig,
    pub screening: ScreeningSection,
    pub advise: AdviseOptions,
    pub cost: CostModel,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        let mut config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(seed) = config.seed {
            config.set_seed(seed);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.sampling.seed = seed;
        self.history.seed = seed;
        self.training.seed = seed;
    }

    pub fn windows(&self) -> Result<WindowSet, ConfigError> {
        self.miner
            .windows
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("windows: {e}")))
    }

    pub fn miner_config(&self) -> Result<MinerConfig, ConfigError> {
        Ok(MinerConfig {
            windows: self.windows()?,
            criterion: self.criterion,
            max_cardinality: self.miner.max_cardinality,
        })
    }

    /// History settings checked against the top-level criterion.
    pub fn history_config(&self) -> HistoryConfig {
        HistoryConfig {
            criterion: self.criterion,
            ..self.history.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !self.criterion.is_valid() {
            return invalid(format!("criterion threshold {}", self.criterion.threshold));
        }
        self.windows()?;
        if self.miner.max_cardinality == 0 {
            return invalid("miner.max_cardinality must be at least 1".into());
        }
        self.sampling
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("sampling: {e}")))?;
        self.history_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("history: {e}")))?;
        if !(self.screening.margin >= 0.0 && self.screening.margin < 1.0) {
            return invalid(format!("screening.margin {}", self.screening.margin));
        }
        if self.advise.k == 0 {
            return invalid("advise.k must be at least 1".into());
        }
        if !self.cost.is_valid() {
            return invalid("costs must be finite and non-negative".into());
        }
        if self.training.hidden.is_empty() || self.training.hidden.contains(&0) {
            return invalid("training.hidden needs at least one non-empty layer".into());
        }
        Ok(())
    }
}

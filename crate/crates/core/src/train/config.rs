use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gat::ModelConfig;
use crate::retrieval::RetrievalConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosWeightMode {
    /// N_neg / N_pos of the training fold.
    #[default]
    Balanced,
    Off,
}

impl PosWeightMode {
    pub fn weight(self, negatives: usize, positives: usize) -> Result<f64> {
        match self {
            PosWeightMode::Off => Ok(1.0),
            PosWeightMode::Balanced if positives == 0 => {
                Err(Error::Invalid("training fold has no positive subjects".into()))
            }
            PosWeightMode::Balanced => Ok(negatives as f64 / positives as f64),
        }
    }
}

impl fmt::Display for PosWeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosWeightMode::Balanced => "balanced",
            PosWeightMode::Off => "off",
        })
    }
}

impl FromStr for PosWeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(PosWeightMode::Balanced),
            "off" => Ok(PosWeightMode::Off),
            other => Err(Error::Config(format!("unknown pos_weight mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub folds: usize,
    pub seed: u64,
    pub patience: usize,
    pub model: ModelConfig,
    pub retrieval: RetrievalConfig,
    pub retrieval_enabled: bool,
    pub pos_weight: PosWeightMode,
    pub aux_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            max_epochs: 50,
            learning_rate: 1e-3,
            folds: 4,
            seed: 42,
            patience: 10,
            model: ModelConfig::default(),
            retrieval: RetrievalConfig::default(),
            retrieval_enabled: true,
            pos_weight: PosWeightMode::Balanced,
            aux_weight: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.aux_weight >= 0.0 && self.aux_weight.is_finite()) {
            return Err(Error::Config("aux_weight must be nonnegative".into()));
        }
        self.model.validate()?;
        self.retrieval.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

//! Experiment configuration (TOML).
//!
//! Every field has a default, so an empty file is a valid experiment.
//! Command-line flags override individual keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clf_reward::{ClfConfig, RewardWeights};
use crate::env::{EnvConfig, RewardVariant};
use crate::error::{Error, Result};
use crate::hlip::HlipReferenceConfig;
use crate::trainer::{PpoConfig, TrainSetup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: RewardVariant,
    pub output_dir: PathBuf,
    pub gait_library_path: Option<PathBuf>,
    pub env: EnvConfig,
    pub clf: ClfConfig,
    pub weights: RewardWeights,
    pub ppo: PpoConfig,
    /// Swing and auxiliary channels of the H-LIP reference.
    pub reference: HlipReferenceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: RewardVariant::TrackingPlusDecayTanh,
            output_dir: PathBuf::from("runs"),
            gait_library_path: None,
            env: EnvConfig::default(),
            clf: ClfConfig::default(),
            weights: RewardWeights::default(),
            ppo: PpoConfig::default(),
            reference: HlipReferenceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates; a relative `gait_library_path` is resolved against the config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)?;
        if let (Some(lib), Some(dir)) = (&cfg.gait_library_path, path.parent()) {
            if lib.is_relative() {
                cfg.gait_library_path = Some(dir.join(lib));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.weights.validate()?;
        self.ppo.validate()?;
        self.clf.bundle(self.env.output_dim())?;
        if (self.reference.t_period - self.env.t_period).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "reference.t_period {} differs from env.t_period {}",
                self.reference.t_period, self.env.t_period
            )));
        }
        if let Some(lib) = &self.gait_library_path {
            if !lib.exists() {
                return Err(Error::Config(format!("gait_library_path {} does not exist", lib.display())));
            }
        }
        Ok(())
    }

    pub fn train_setup(&self) -> TrainSetup {
        TrainSetup {
            env: self.env.clone(),
            clf: self.clf.clone(),
            weights: self.weights,
            ppo: self.ppo.clone(),
            variant: self.variant,
        }
    }
}

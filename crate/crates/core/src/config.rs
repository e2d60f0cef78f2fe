//! Run configuration: one TOML document holding the dataset, network and
//! training settings plus the run seed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::train::TrainConfig;
use crate::unet::NetConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; results do not depend on this.
    pub threads: usize,
    pub paths: Paths,
    pub dataset: DatasetConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            threads: 1,
            paths: Paths::default(),
            dataset: DatasetConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse and validate. Missing keys take their defaults; unknown keys
    /// are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::InvalidArgument("threads must be at least 1".into()));
        }
        self.dataset.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        let classes = self.dataset.phantom.num_classes();
        if classes != self.net.num_classes {
            return Err(Error::InvalidArgument(format!(
                "phantoms have {classes} classes but net.num_classes is {}",
                self.net.num_classes
            )));
        }
        let m = self.net.spatial_multiple();
        let (h, w) = (self.dataset.phantom.height, self.dataset.phantom.width);
        if h % m != 0 || w % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "phantom extents {h}x{w} must be multiples of {m} for depth {}",
                self.net.depth
            )));
        }
        Ok(())
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

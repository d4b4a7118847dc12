//! The unified experiment configuration. One JSON document drives
//! every command; whatever a run writes includes the exact config it
//! ran under, so any output directory can reproduce itself.

use hamball::data::{reference_spec, ShiftSpec, REFERENCE_SEED};
use hamball::trainer::TrainConfig;
use hamball::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

fn default_n_source() -> usize {
    2000
}
fn default_n_target() -> usize {
    2000
}
fn default_data_seed() -> u64 {
    REFERENCE_SEED
}
fn default_n_queries() -> usize {
    200
}
fn default_radius() -> usize {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Synthetic task geometry.
    pub task: ShiftSpec,
    /// Training hyperparameters, including variant, bits, and seed.
    pub train: TrainConfig,
    pub n_source: usize,
    pub n_target: usize,
    /// Seed the datasets are generated from; independent of the
    /// training seed.
    pub data_seed: u64,
    /// Leading target rows held out as queries; the rest form the
    /// retrieval database and the unlabeled adversarial pool.
    pub n_queries: usize,
    /// Hamming radius for retrieval and metrics.
    pub radius: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: reference_spec(),
            train: TrainConfig::default(),
            n_source: default_n_source(),
            n_target: default_n_target(),
            data_seed: default_data_seed(),
            n_queries: default_n_queries(),
            radius: default_radius(),
        }
    }
}

impl ExperimentConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n_queries == 0 || self.n_queries >= self.n_target {
            return Err(Error::InvalidArgument(format!(
                "n_queries must be in 1..n_target, got {} of {}",
                self.n_queries, self.n_target
            )));
        }
        if self.radius > self.train.bits {
            return Err(Error::InvalidArgument(format!(
                "radius {} exceeds code length {}",
                self.radius, self.train.bits
            )));
        }
        Ok(())
    }

    /// Writes the config as pretty JSON, the exact bytes a rerun reads
    /// back. Field order is fixed by the struct, so echoes are stable.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(format!("unserializable config: {e}")))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

//! Top-level run configuration read by the command-line tool.
//!
//! Every section has defaults, so a config file only needs the fields it
//! changes: `{"threshold": 1.0, "sampler": {"n_sources": 3}}` is complete.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticCorpusConfig;
use crate::error::{Error, Result};
use crate::model::TrainConfig;
use crate::sampler::SamplerConfig;
use crate::scene::{BuildParams, DatasetConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threshold: f64,
    pub spp: f64,
    pub count: usize,
    /// Percentage of silent-target scenes to enforce when generating rooms.
    pub prefilter_pct: Option<f64>,
    pub sampler: SamplerConfig,
    pub build: BuildParams,
    pub train: TrainConfig,
    pub corpus: SyntheticCorpusConfig,
    pub paths: RunPaths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub corpus: Option<PathBuf>,
    pub rooms: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threshold: 1.5,
            spp: 1.0,
            count: 1000,
            prefilter_pct: None,
            sampler: SamplerConfig::default(),
            build: BuildParams::default(),
            train: TrainConfig::default(),
            corpus: SyntheticCorpusConfig::default(),
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Uses `seed` for every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sampler.seed = seed;
        self.train.seed = seed;
        self.train.model.seed = seed;
        self.corpus.seed = seed;
        self
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            count: self.count,
            threshold: self.threshold,
            spp: self.spp,
            seed: self.seed,
            build: self.build.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.dataset().validate()?;
        self.train.validate()?;
        if let Some(p) = self.prefilter_pct {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "prefilter_pct {p} outside [0, 100]"
                )));
            }
        }
        Ok(())
    }
}

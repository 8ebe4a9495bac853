use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{RatioBasis, Strategy};
use crate::model::{Hyperparams, ModelKind};
use crate::rng;
use crate::unlearn::{AbsentShard, Method, ScifConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_min_interactions")]
    pub min_interactions: usize,
}

fn default_min_interactions() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub split: u64,
    pub selection: u64,
    pub training: u64,
    pub mio: u64,
}

impl SeedConfig {
    /// Four independent seeds derived from one base seed. Each fits in 63
    /// bits because TOML integers are signed.
    pub fn from_base(base: u64) -> Self {
        let seed = |stream| rng::derive(base, stream) & i64::MAX as u64;
        SeedConfig {
            split: seed(1),
            selection: seed(2),
            training: seed(3),
            mio: seed(4),
        }
    }
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig::from_base(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub shards: Vec<usize>,
    pub ratios: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            shards: vec![5, 10, 20],
            ratios: vec![0.05, 0.10, 0.15, 0.20],
        }
    }
}

/// Everything one experiment needs. Loaded from TOML; every field except
/// `dataset` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_ratio")]
    pub unlearn_ratio: f64,
    #[serde(default)]
    pub ratio_basis: RatioBasis,
    #[serde(default = "default_shards")]
    pub num_shards: usize,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default)]
    pub scif: ScifConfig,
    /// How shard submodels score users they never saw.
    #[serde(default)]
    pub absent_shard: AbsentShard,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default = "default_holdout")]
    pub mio_holdout_fraction: f64,
    /// Shard retraining threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Wmf]
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}
fn default_ratio() -> f64 {
    0.05
}
fn default_shards() -> usize {
    10
}
fn default_holdout() -> f64 {
    0.05
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    /// Defaults for everything but the dataset.
    pub fn new(name: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            dataset: DatasetConfig {
                name: name.into(),
                path: path.into(),
                min_interactions: default_min_interactions(),
            },
            models: default_models(),
            methods: default_methods(),
            strategies: default_strategies(),
            unlearn_ratio: default_ratio(),
            ratio_basis: RatioBasis::default(),
            num_shards: default_shards(),
            seeds: SeedConfig::default(),
            hyper: Hyperparams::default(),
            scif: ScifConfig::default(),
            absent_shard: AbsentShard::default(),
            sweep: SweepConfig::default(),
            mio_holdout_fraction: default_holdout(),
            workers: 0,
            output_dir: default_output_dir(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file. Relative dataset and output paths are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            if cfg.dataset.path.is_relative() {
                cfg.dataset.path = base.join(&cfg.dataset.path);
            }
            if cfg.output_dir.is_relative() {
                cfg.output_dir = base.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let ratio_ok = |r: f64| r > 0.0 && r < 1.0;
        if !ratio_ok(self.unlearn_ratio) {
            return Err(Error::Config(format!(
                "unlearn_ratio {} outside (0, 1)",
                self.unlearn_ratio
            )));
        }
        if self.num_shards == 0 {
            return Err(Error::Config("num_shards must be at least 1".into()));
        }
        if !(self.mio_holdout_fraction > 0.0 && self.mio_holdout_fraction < 1.0) {
            return Err(Error::Config("mio_holdout_fraction must be in (0, 1)".into()));
        }
        if self.models.is_empty() || self.methods.is_empty() || self.strategies.is_empty() {
            return Err(Error::Config("models, methods and strategies must be non-empty".into()));
        }
        if let Some(r) = self.sweep.ratios.iter().find(|&&r| !ratio_ok(r)) {
            return Err(Error::Config(format!("sweep ratio {r} outside (0, 1)")));
        }
        if self.sweep.shards.contains(&0) {
            return Err(Error::Config("sweep shard counts must be at least 1".into()));
        }
        self.hyper.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

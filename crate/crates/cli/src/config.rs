//! Run configuration file.
//!
//! TOML with one top-level `seed` and `out_dir` and a section per stage:
//!
//! ```toml
//! seed = 0
//! out_dir = "runs"
//!
//! [env]
//! name = "maze2d"        # fixture name or path to a world JSON file
//!
//! [dataset]              # expert data generation
//! n_tasks = 100
//! samples_per_task = 20
//! length = 64
//!
//! [train]
//! epochs = 300
//! [train.net]
//! hidden = [272, 272, 272]
//!
//! [sample]
//! steps = 30
//! batch = 25
//!
//! [bench]
//! n_tasks = 50
//! lengths = [64, 128, 256]
//! ```
//!
//! Every key is optional. Unknown keys are rejected, and so are `seed` keys
//! inside sections.

use std::path::{Path, PathBuf};

use motionfield::envs::WorldSdf;
use motionfield::flow::TrainConfig;
use motionfield::metrics::BenchConfig;
use motionfield::optimizer::DatasetConfig;
use motionfield::sampler::SampleConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

const SEEDED_SECTIONS: [&str; 4] = ["dataset", "train", "sample", "bench"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub name: String,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            name: "maze2d".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub n_tasks: usize,
    pub min_separation: f64,
    pub parallel: bool,
    pub lengths: Vec<usize>,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self {
            n_tasks: b.n_tasks,
            min_separation: b.min_separation,
            parallel: b.parallel,
            lengths: vec![64, 128, 256],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvSection,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            env: EnvSection::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            sample: SampleConfig::default(),
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        for section in SEEDED_SECTIONS {
            if table
                .get(section)
                .and_then(|s| s.as_table())
                .is_some_and(|s| s.contains_key("seed"))
            {
                return Err(CliError::Config(format!(
                    "[{section}] sets seed; use the top-level seed"
                )));
            }
        }
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    /// Propagates the global seed into every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.sample.seed = seed;
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            n_tasks: self.bench.n_tasks,
            seed: self.seed,
            min_separation: self.bench.min_separation,
            sample: self.sample.clone(),
            parallel: self.bench.parallel,
        }
    }

    pub fn world(&self) -> Result<WorldSdf, CliError> {
        WorldSdf::resolve(&self.env.name)
            .map_err(|e| CliError::Config(format!("env {:?}: {e}", self.env.name)))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |r: motionfield::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        wrap(self.dataset.validate())?;
        wrap(self.train.validate())?;
        wrap(self.sample.validate())?;
        if self.bench.lengths.is_empty() || self.bench.lengths.contains(&0) {
            return Err(CliError::Config(
                "bench lengths must be a non-empty list of positive lengths".into(),
            ));
        }
        if !(self.bench.min_separation.is_finite() && self.bench.min_separation >= 0.0) {
            return Err(CliError::Config(
                "bench min_separation must be nonnegative".into(),
            ));
        }
        self.world()?;
        Ok(())
    }
}

//! Run configuration: a TOML file overlaid by command-line flags.
//!
//! ```toml
//! seed = 42
//! model_type = "forest"
//! polarity = "standard"
//! threshold = 0.5
//!
//! [split]
//! train_fraction = 0.8
//! stratified = true
//!
//! [forest]
//! n_trees = 100
//! max_depth = 8
//!
//! [surrogate]
//! n_samples = 5000
//!
//! [reconcile]
//! min_relative_shift = 0.05
//! ```
//!
//! Every table is optional and every missing key takes its default. A
//! top-level `seed` seeds the split, the forest, the surrogate and the
//! reconciler, so per-table `seed` keys are overwritten; `--seed` overrides
//! the top-level value.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use twinscope_core::data::{LabelPolarity, SplitSpec};
use twinscope_core::explain::SurrogateConfig;
use twinscope_core::learners::{ForestConfig, LogisticConfig};
use twinscope_core::reconcile::ReconcileConfig;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    #[default]
    Forest,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model_type: ModelType,
    pub polarity: LabelPolarity,
    pub threshold: f64,
    pub split: SplitSpec,
    pub forest: ForestConfig,
    pub logistic: LogisticConfig,
    pub surrogate: SurrogateConfig,
    pub reconcile: ReconcileConfig,
    pub serve: ServeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub model: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub background: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("twins"),
            model: None,
            rules: None,
            background: None,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            seed: DEFAULT_SEED,
            model_type: ModelType::Forest,
            polarity: LabelPolarity::Standard,
            threshold: 0.5,
            split: SplitSpec::default(),
            forest: ForestConfig::default(),
            logistic: LogisticConfig::default(),
            surrogate: SurrogateConfig::default(),
            reconcile: ReconcileConfig::default(),
            serve: ServeConfig::default(),
        };
        cfg.set_seed(DEFAULT_SEED);
        cfg
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    /// Copies the run seed into every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.split.seed = seed;
        self.forest.seed = seed;
        self.surrogate.seed = seed;
        self.reconcile.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            bail!("threshold must lie in [0, 1], got {}", self.threshold);
        }
        self.forest.validate()?;
        self.surrogate.validate()?;
        self.reconcile.validate()?;
        Ok(())
    }
}

/// `<artifact>.config.json`
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    artifact.with_file_name(name)
}

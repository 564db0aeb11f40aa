//! Experiment configuration files (TOML).
//!
//! Every section is optional and falls back to defaults; unknown keys are
//! rejected. A complete file looks like:
//!
//! ```toml
//! seed = 1
//! out_dir = "runs/augmax"
//!
//! [data]
//! train = "data/train.axd"
//! test = "data/test.axd"
//! [data.toyset]
//! classes = 10
//! per_class = 500
//! size = 32
//!
//! [model]
//! input_shape = [3, 32, 32]
//! classes = 10
//! norm = "dubin"
//!
//! [train]
//! mode = "augmax"
//! lambda = 10.0
//! epochs = 30
//! batch_size = 64
//! chains = 3
//! [train.optimizer]
//! lr = 0.1
//! [train.attack]
//! n = 10
//! k = 1
//! alpha = 0.1
//!
//! [suite]
//! severities = [1, 2, 3, 4, 5]
//! exclude_additive_noise = false
//!
//! [ablation]
//! n = [5, 10]
//! k = [1, 2, 3]
//! lambda = [1.0, 10.0, 15.0]
//! ```
//!
//! Only the top-level `seed` is read; the model, training and suite seeds are
//! derived from it with purpose tags `"model"`, `"train"`, `"suite"`,
//! `"toyset"` and `"demo"`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ToysetConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::robustbench::{CorruptionSuite, SuiteConfig};
use crate::seed::derive_seed;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub toyset: ToysetConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: PathBuf::from("data/train.axd"),
            test: PathBuf::from("data/test.axd"),
            toyset: ToysetConfig::default(),
        }
    }
}

/// Grid swept by the `ablate` command; every cell trains in AugMax mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub lambda: Vec<f32>,
    /// Epochs per cell; falls back to `train.epochs`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            n: vec![5, 10],
            k: vec![1, 2, 3],
            lambda: vec![1.0, 10.0, 15.0],
            epochs: None,
        }
    }
}

impl AblationGrid {
    /// All `(n, k, λ)` cells in sweep order.
    pub fn cells(&self) -> Vec<(usize, usize, f32)> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &k in &self.k {
                for &lambda in &self.lambda {
                    out.push((n, k, lambda));
                }
            }
        }
        out
    }
}

/// Settings of the `attack-demo` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Test images attacked.
    pub samples: usize,
    /// How many of them are also written as PNG triples.
    pub images: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { samples: 64, images: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub suite: SuiteConfig,
    pub ablation: AblationGrid,
    pub demo: DemoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            suite: SuiteConfig::default(),
            ablation: AblationGrid::default(),
            demo: DemoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {}", e.to_string().trim())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The document `--print-config` emits; parses back to an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.toyset.validate()?;
        CorruptionSuite::new(&self.suite)?;
        let grid = &self.ablation;
        if grid.n.is_empty() || grid.k.is_empty() || grid.lambda.is_empty() {
            return Err(Error::Config("ablation grid axes must be non-empty".into()));
        }
        if self.demo.images > self.demo.samples {
            return Err(Error::Config(format!(
                "demo.images ({}) exceeds demo.samples ({})",
                self.demo.images, self.demo.samples
            )));
        }
        Ok(())
    }

    /// Model config with its derived initialization seed.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: derive_seed(self.seed, "model", 0),
            ..self.model.clone()
        }
    }

    /// Training config with its derived seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train", 0),
            ..self.train.clone()
        }
    }

    /// Validated corruption suite with its derived seed.
    pub fn suite(&self) -> Result<CorruptionSuite> {
        CorruptionSuite::new(&SuiteConfig {
            seed: derive_seed(self.seed, "suite", 0),
            ..self.suite.clone()
        })
    }

    pub fn toyset_seed(&self) -> u64 {
        derive_seed(self.seed, "toyset", 0)
    }

    pub fn demo_seed(&self) -> u64 {
        derive_seed(self.seed, "demo", 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(ExperimentConfig::parse("", "t").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::parse("[train]\nlamda = 3.0\n", "cfg.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lamda") && msg.contains("cfg.toml"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn print_config_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 42;
        cfg.train.lambda = 1.5;
        cfg.train.pgd.eps = 3.0 / 255.0;
        cfg.ablation.epochs = Some(2);
        cfg.suite.exclude_additive_noise = true;
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::parse(&text, "echo").unwrap(), cfg);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::parse("[train]\nbatch_size = 1\n", "t").is_err());
        assert!(ExperimentConfig::parse("[train.attack]\nn = 2\nk = 3\n", "t").is_err());
        assert!(ExperimentConfig::parse("[model]\nnorm = \"dubin\"\nwidths = [3, 4, 4]\n", "t").is_err());
    }

    #[test]
    fn seeds_derive_from_top_level() {
        let a = ExperimentConfig { seed: 1, ..Default::default() };
        let b = ExperimentConfig { seed: 2, ..Default::default() };
        assert_ne!(a.model_config().seed, b.model_config().seed);
        assert_ne!(a.train_config().seed, a.model_config().seed);
    }
}

//! Toy-scale fixtures shared by oracle cases and the acceptance harness: the
//! 10-class toyset and SmallCNN models trained on it.
//!
//! Trained models are cached as checkpoints in an optional directory, keyed by
//! a hash of every setting that influences them, so separate test binaries
//! train each fixture once.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use augmax::data::{gen_toyset, Dataset, ToysetConfig};
use augmax::diffcore::{checkpoint, Network};
use augmax::model::{build, ModelConfig};
use augmax::seed::derive_seed;
use augmax::trainer::{accuracy, fit, TrainConfig, TrainMode};
use augmax::{NormKind, Result};

/// Seed of the fixture toyset and every fixture model.
pub const FIXTURE_SEED: u64 = 2024;

/// Epochs every fixture model trains for.
pub const FIXTURE_EPOCHS: usize = 30;

/// 10 classes at 32×32, 100 training and 100 test images per class.
pub fn toyset_config() -> ToysetConfig {
    ToysetConfig {
        classes: 10,
        per_class: 100,
        test_per_class: Some(100),
        size: 32,
    }
}

/// The standard SmallCNN for the fixture toyset.
pub fn model_config(norm: NormKind) -> ModelConfig {
    ModelConfig {
        input_shape: [3, 32, 32],
        classes: 10,
        norm,
        seed: derive_seed(FIXTURE_SEED, "model", 0),
        ..ModelConfig::default()
    }
}

pub fn train_config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        epochs: FIXTURE_EPOCHS,
        seed: derive_seed(FIXTURE_SEED, "train", 0),
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct ToyData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn toy_data() -> Result<ToyData> {
    let (train, test) = gen_toyset(&toyset_config(), derive_seed(FIXTURE_SEED, "toyset", 0))?;
    Ok(ToyData { train, test })
}

/// A trained fixture with its accuracies.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Network,
    /// Clean accuracy (%) on the training split.
    pub train_accuracy: f64,
    /// Clean accuracy (%) on the test split.
    pub test_accuracy: f64,
    /// Whether the model came from the checkpoint cache.
    pub cached: bool,
}

/// Lazily built fixtures.
pub struct Fixtures {
    cache_dir: Option<PathBuf>,
    data: Option<ToyData>,
    models: HashMap<(TrainMode, NormKind), Trained>,
}

impl Fixtures {
    pub fn new(cache_dir: Option<PathBuf>) -> Self {
        Self {
            cache_dir,
            data: None,
            models: HashMap::new(),
        }
    }

    pub fn data(&mut self) -> Result<&ToyData> {
        if self.data.is_none() {
            self.data = Some(toy_data()?);
        }
        Ok(self.data.as_ref().expect("just set"))
    }

    /// The BN fixture model trained with `mode`.
    pub fn trained(&mut self, mode: TrainMode) -> Result<&Trained> {
        self.trained_with(mode, NormKind::Bn)
    }

    /// The fixture model with `norm` layers trained with `mode`.
    pub fn trained_with(&mut self, mode: TrainMode, norm: NormKind) -> Result<&Trained> {
        let key = (mode, norm);
        if !self.models.contains_key(&key) {
            let data = self.data()?.clone();
            let trained = train_or_load(mode, norm, &data, self.cache_dir.as_deref())?;
            self.models.insert(key, trained);
        }
        Ok(&self.models[&key])
    }
}

fn cache_path(dir: &Path, mode: TrainMode, norm: NormKind) -> PathBuf {
    let key = format!(
        "{}|{:?}|{:?}|{:?}|{}",
        env!("CARGO_PKG_VERSION"),
        toyset_config(),
        model_config(norm),
        train_config(mode),
        FIXTURE_SEED
    );
    dir.join(format!("fixture-{}-{:016x}.axc", mode.name(), derive_seed(0, &key, 0)))
}

fn train_or_load(mode: TrainMode, norm: NormKind, data: &ToyData, cache_dir: Option<&Path>) -> Result<Trained> {
    let mut model = build(&model_config(norm))?;
    let path = cache_dir.map(|d| cache_path(d, mode, norm));
    let cached = match &path {
        Some(p) if p.exists() => {
            checkpoint::load(&mut model, p)?;
            true
        }
        _ => {
            fit(&mut model, &data.train, None, &train_config(mode), None)?;
            if let Some(p) = &path {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| augmax::Error::io(dir, e))?;
                }
                checkpoint::save(&model, p)?;
            }
            false
        }
    };
    Ok(Trained {
        train_accuracy: accuracy(&model, &data.train, 256)?,
        test_accuracy: accuracy(&model, &data.test, 256)?,
        model,
        cached,
    })
}

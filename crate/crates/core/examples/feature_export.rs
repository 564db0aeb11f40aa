//! Writes penultimate-layer features of the test set as CSV for external
//! plotting.
//!
//! ```text
//! cargo run --release --example feature_export -- [features.csv]
//! ```

use std::path::PathBuf;

use augmax::cli::features_csv;
use augmax::data::{gen_toyset, ToysetConfig};
use augmax::model::{build, ModelConfig};
use augmax::trainer::{fit, TrainConfig, TrainMode};
use augmax::NormKind;

fn main() -> augmax::Result<()> {
    let path = std::env::args().nth(1).map_or_else(|| PathBuf::from("features.csv"), PathBuf::from);
    let toy = ToysetConfig { classes: 5, per_class: 40, test_per_class: Some(20), size: 16 };
    let (train, test) = gen_toyset(&toy, 1)?;
    let mut model = build(&ModelConfig {
        input_shape: [3, 16, 16],
        classes: 5,
        norm: NormKind::Bn,
        widths: [8, 16, 16],
        seed: 1,
    })?;
    fit(&mut model, &train, None, &TrainConfig { mode: TrainMode::Normal, epochs: 5, batch_size: 20, seed: 2, ..Default::default() }, None)?;
    let csv = features_csv(&model, &test)?;
    std::fs::write(&path, &csv).map_err(|e| augmax::Error::io(&path, e))?;
    println!("wrote {} rows to {}", csv.lines().count() - 1, path.display());
    Ok(())
}

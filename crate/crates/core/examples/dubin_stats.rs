//! Trains a DuBIN model in AugMax mode and prints the mean running variance
//! of the clean and adversarial statistics branches per layer.
//!
//! ```text
//! cargo run --release --example dubin_stats
//! ```

use augmax::cli::stats_tables;
use augmax::data::{gen_toyset, ToysetConfig};
use augmax::model::{build, ModelConfig};
use augmax::trainer::{fit, TrainConfig, TrainMode};
use augmax::NormKind;

fn main() -> augmax::Result<()> {
    let toy = ToysetConfig { classes: 4, per_class: 40, test_per_class: Some(5), size: 16 };
    let (train, _) = gen_toyset(&toy, 5)?;
    let mut model = build(&ModelConfig {
        input_shape: [3, 16, 16],
        classes: 4,
        norm: NormKind::Dubin,
        widths: [8, 8, 16],
        seed: 3,
    })?;
    let cfg = TrainConfig {
        mode: TrainMode::Augmax,
        epochs: 3,
        batch_size: 16,
        seed: 4,
        ..Default::default()
    };
    fit(&mut model, &train, None, &cfg, None)?;
    let (text, csv) = stats_tables(&model);
    print!("{text}\n{csv}");
    Ok(())
}

//! Full AugMax training run with a per-epoch log and a checkpoint.
//!
//! ```text
//! cargo run --release --example train_augmax -- [out_dir] [epochs]
//! ```

use std::path::PathBuf;

use augmax::data::{gen_toyset, ToysetConfig};
use augmax::model::{build, ModelConfig};
use augmax::trainer::{fit_with, TrainConfig, TrainMode, LOG_HEADER};
use augmax::NormKind;

fn main() -> augmax::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| PathBuf::from("augmax_run"), PathBuf::from);
    let epochs = args.next().and_then(|e| e.parse().ok()).unwrap_or(5);
    let (train, test) = gen_toyset(&ToysetConfig { per_class: 100, ..Default::default() }, 1)?;
    let mut model = build(&ModelConfig { norm: NormKind::Dubin, seed: 1, ..Default::default() })?;
    let cfg = TrainConfig {
        mode: TrainMode::Augmax,
        epochs,
        seed: 2,
        ..Default::default()
    };
    println!("{LOG_HEADER}");
    let report = fit_with(&mut model, &train, Some(&test), &cfg, Some(&out), |e| println!("{}", e.line()))?;
    println!(
        "{} epochs in {:.0}s, checkpoint {}",
        report.epochs.len(),
        report.seconds,
        report.checkpoint.as_deref().unwrap_or(out.as_path()).display()
    );
    Ok(())
}

//! Mean corruption error of an AugMix-trained model relative to a normally
//! trained baseline; the baseline against itself scores exactly 100.
//!
//! ```text
//! cargo run --release --example mce_compare
//! ```

use augmax::data::{gen_toyset, ToysetConfig};
use augmax::model::{build, ModelConfig};
use augmax::robustbench::{evaluate, mce, CorruptionSuite, SuiteConfig};
use augmax::trainer::{fit, TrainConfig, TrainMode};
use augmax::NormKind;

fn main() -> augmax::Result<()> {
    let toy = ToysetConfig { classes: 6, per_class: 100, test_per_class: Some(20), size: 24 };
    let (train, test) = gen_toyset(&toy, 1)?;
    let suite = CorruptionSuite::new(&SuiteConfig { seed: 9, ..Default::default() })?;
    let mut reports = Vec::new();
    for mode in [TrainMode::Normal, TrainMode::Augmix] {
        let mut model = build(&ModelConfig {
            input_shape: [3, 24, 24],
            classes: 6,
            norm: NormKind::Bn,
            widths: [8, 16, 16],
            seed: 1,
        })?;
        let cfg = TrainConfig { mode, epochs: 15, batch_size: 32, seed: 2, ..Default::default() };
        fit(&mut model, &train, None, &cfg, None)?;
        let r = evaluate(&model, &test, &suite)?;
        println!("{:<7} SA {:6.2}  RA {:6.2}", mode.name(), r.sa, r.ra);
        reports.push(r);
    }
    println!("mCE(normal vs normal) = {:.2}", mce(&reports[0], &reports[0])?);
    println!("mCE(augmix vs normal) = {:.2}", mce(&reports[1], &reports[0])?);
    Ok(())
}

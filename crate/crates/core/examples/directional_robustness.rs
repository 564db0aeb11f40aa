//! Trains normal, AugMix and AugMax-DuBIN models on the same toyset and
//! compares clean and corrupted accuracy.
//!
//! ```text
//! cargo run --release --example directional_robustness -- [per_class] [epochs]
//! ```

use augmax::data::{gen_toyset, ToysetConfig};
use augmax::model::{build, ModelConfig};
use augmax::robustbench::{evaluate, CorruptionSuite, SuiteConfig};
use augmax::trainer::{fit, TrainConfig, TrainMode};
use augmax::NormKind;

fn main() -> augmax::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_class = args.next().and_then(|v| v.parse().ok()).unwrap_or(50);
    let epochs = args.next().and_then(|v| v.parse().ok()).unwrap_or(10);
    let (train, test) = gen_toyset(&ToysetConfig { per_class, test_per_class: Some(30), ..Default::default() }, 1)?;
    let suite = CorruptionSuite::new(&SuiteConfig { seed: 2, ..Default::default() })?;
    println!("mode           SA      RA");
    for (mode, norm) in [
        (TrainMode::Normal, NormKind::Bn),
        (TrainMode::Augmix, NormKind::Bn),
        (TrainMode::Augmax, NormKind::Dubin),
    ] {
        let mut model = build(&ModelConfig { norm, seed: 1, ..Default::default() })?;
        let cfg = TrainConfig { mode, epochs, seed: 3, ..Default::default() };
        fit(&mut model, &train, None, &cfg, None)?;
        let r = evaluate(&model, &test, &suite)?;
        println!("{:<8}/{:<5} {:6.2}  {:6.2}", mode.name(), norm.name(), r.sa, r.ra);
    }
    Ok(())
}

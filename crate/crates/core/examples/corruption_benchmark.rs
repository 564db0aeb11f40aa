//! Evaluates a model on every corruption kind and severity and prints the
//! accuracy table, SA and RA.
//!
//! ```text
//! cargo run --release --example corruption_benchmark -- [checkpoint.axc]
//! ```
//!
//! Without a checkpoint a model is trained for a few epochs first; a
//! checkpoint must match the default SmallCNN with DuBIN layers.

use augmax::data::{gen_toyset, ToysetConfig};
use augmax::diffcore::checkpoint;
use augmax::model::{build, ModelConfig};
use augmax::robustbench::{evaluate, CorruptionSuite, SuiteConfig};
use augmax::trainer::{fit, TrainConfig, TrainMode};
use augmax::NormKind;

fn main() -> augmax::Result<()> {
    let (train, test) = gen_toyset(&ToysetConfig { per_class: 60, ..Default::default() }, 1)?;
    let mut model = build(&ModelConfig { norm: NormKind::Dubin, seed: 1, ..Default::default() })?;
    match std::env::args().nth(1) {
        Some(path) => checkpoint::load(&mut model, path.as_ref())?,
        None => {
            let cfg = TrainConfig { mode: TrainMode::Augmix, epochs: 4, seed: 2, ..Default::default() };
            fit(&mut model, &train, None, &cfg, None)?;
        }
    }
    let suite = CorruptionSuite::new(&SuiteConfig { seed: 3, ..Default::default() })?;
    let report = evaluate(&model, &test, &suite)?;
    print!("{}", report.cells_csv());
    for (kind, acc) in report.per_kind() {
        println!("{:<20} {acc:6.2}", kind.name());
    }
    println!("SA {:.2}  RA {:.2}", report.sa, report.ra);
    Ok(())
}

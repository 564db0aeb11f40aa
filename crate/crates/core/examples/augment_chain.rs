//! Samples augmentation chains, applies them op by op and mixes the chain
//! outputs AugMix-style.
//!
//! ```text
//! cargo run --release --example augment_chain -- [out_dir]
//! ```

use std::path::PathBuf;

use augmax::augops::{apply_op, sample_chains};
use augmax::cli::save_png;
use augmax::data::{gen_toyset, ToysetConfig};
use augmax::mixer::{augmix_sample, MixingDistribution};

fn main() -> augmax::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| PathBuf::from("chains"), PathBuf::from);
    let (train, _) = gen_toyset(&ToysetConfig { per_class: 1, ..Default::default() }, 3)?;
    let x = train.image(0);
    save_png(&x, &dir.join("original.png"))?;

    let seed = 42;
    for (c, chain) in sample_chains(seed, 3).iter().enumerate() {
        let mut y = x.clone();
        for (j, op) in chain.ops().iter().enumerate() {
            y = apply_op(&y, op)?;
            println!(
                "chain {c} op {j}: {:<12} severity {:2}{}",
                op.kind().name(),
                op.severity(),
                if op.negated() { " (negated)" } else { "" }
            );
            save_png(&y, &dir.join(format!("chain{c}_op{j}.png")))?;
        }
    }

    let sample = augmix_sample(&x, seed, 3, &MixingDistribution::default())?;
    println!("mixing m = {:.3}, w = {:?}", sample.params.m(), sample.params.weights());
    save_png(&sample.image, &dir.join("augmix.png"))?;
    println!("wrote images to {}", dir.display());
    Ok(())
}

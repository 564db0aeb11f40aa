//! Trains a small model briefly, then learns worst-case mixing parameters for
//! a few test images and compares their loss with random AugMix mixing on the
//! same chains.
//!
//! ```text
//! cargo run --release --example augmax_attack
//! ```

use augmax::adversary::{generate_augmax, AttackConfig};
use augmax::augops::sample_chains;
use augmax::data::{gen_toyset, ToysetConfig};
use augmax::diffcore::loss::per_sample_cross_entropy;
use augmax::mixer::{chain_outputs, mix, MixingDistribution};
use augmax::model::{build, ModelConfig};
use augmax::seed::{derive_seed, stream};
use augmax::trainer::{accuracy, fit, TrainConfig, TrainMode};
use augmax::{NormKind, NormRoute};

fn main() -> augmax::Result<()> {
    let toy = ToysetConfig { classes: 10, per_class: 80, test_per_class: Some(10), size: 24 };
    let (train, test) = gen_toyset(&toy, 7)?;
    let mut model = build(&ModelConfig {
        input_shape: [3, 24, 24],
        classes: 10,
        norm: NormKind::Bn,
        widths: [16, 32, 32],
        seed: 1,
    })?;
    let cfg = TrainConfig { mode: TrainMode::Normal, epochs: 20, batch_size: 32, seed: 2, ..Default::default() };
    fit(&mut model, &train, None, &cfg, None)?;
    println!("clean accuracy: train {:.1}%, test {:.1}%", accuracy(&model, &train, 64)?, accuracy(&model, &test, 64)?);

    let attack = AttackConfig { n: 10, k: 10, alpha: 0.1, seed: 0 };
    let loss = |img: &augmax::Tensor, label: usize| -> augmax::Result<f64> {
        let logits = model.infer(&img.clone().reshape(&[1, 3, 24, 24])?, NormRoute::Adversarial)?;
        Ok(per_sample_cross_entropy(&logits, &[label])?[0])
    };
    println!("image  augmix-loss  augmax-loss  steps  m      w");
    for i in 0..8 {
        let (x, label) = (test.image(i), test.labels[i]);
        let seed = derive_seed(99, "example", i as u64);
        let chains = sample_chains(seed, 3);
        let random = MixingDistribution::default().sample(3, &mut stream(seed, "mix", 0))?;
        let augmix = mix(&x, &chain_outputs(&x, &chains)?, &random)?;
        let r = generate_augmax(&x, label, &model, &chains, &AttackConfig { seed, ..attack })?;
        println!(
            "{i:5}  {:11.4}  {:11.4}  {:5}  {:.3}  {:.3?}",
            loss(&augmix, label)?,
            loss(&r.x_star, label)?,
            r.steps_taken,
            r.params.m(),
            r.params.weights()
        );
    }
    Ok(())
}

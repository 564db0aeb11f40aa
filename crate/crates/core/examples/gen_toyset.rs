//! Renders the procedural toyset, writes it as AXD1 containers and saves a
//! few samples as PNG.
//!
//! ```text
//! cargo run --release --example gen_toyset -- [out_dir]
//! ```

use std::path::PathBuf;

use augmax::cli::save_png;
use augmax::data::{gen_toyset, load, write_toyset, ToysetConfig};

fn main() -> augmax::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| PathBuf::from("toyset"), PathBuf::from);
    let cfg = ToysetConfig {
        per_class: 50,
        ..ToysetConfig::default()
    };
    let (train_path, test_path) = write_toyset(&cfg, 1, &dir)?;
    let train = load(&train_path)?;
    let test = load(&test_path)?;
    println!("{}: {} images, {}: {} images", train_path.display(), train.len(), test_path.display(), test.len());
    for (class, name) in cfg.class_names().iter().enumerate() {
        println!("class {class:2}: {name}");
    }

    let (in_memory, _) = gen_toyset(&cfg, 1)?;
    assert_eq!(in_memory, train, "a saved container reloads identically");
    for class in 0..cfg.classes {
        let i = train.labels.iter().position(|&l| l == class).expect("every class is present");
        save_png(&train.image(i), &dir.join(format!("sample_{class}.png")))?;
    }
    println!("wrote one PNG per class to {}", dir.display());
    Ok(())
}

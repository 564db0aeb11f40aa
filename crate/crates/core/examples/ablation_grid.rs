//! Runs the `ablate` command on a tiny configuration: one AugMax training and
//! robustness report per (n, k, λ) cell, plus a summary table.
//!
//! ```text
//! cargo run --release --example ablation_grid -- [out_dir]
//! ```

use std::fs;
use std::path::PathBuf;

fn main() -> augmax::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| PathBuf::from("ablation"), PathBuf::from);
    fs::create_dir_all(&dir).map_err(|e| augmax::Error::io(&dir, e))?;
    let config = dir.join("ablation.toml");
    let text = format!(
        r#"seed = 5
out_dir = "{root}/run"

[data]
train = "{root}/data/train.axd"
test = "{root}/data/test.axd"

[data.toyset]
classes = 4
per_class = 24
test_per_class = 8
size = 16

[model]
input_shape = [3, 16, 16]
classes = 4
widths = [8, 8, 16]

[train]
batch_size = 16

[ablation]
n = [5, 10]
k = [1, 2, 3]
lambda = [1.0, 10.0, 15.0]
epochs = 2
"#,
        root = dir.display()
    );
    fs::write(&config, text).map_err(|e| augmax::Error::io(&config, e))?;
    let config = config.to_string_lossy().into_owned();
    augmax::cli::run(["augmax", "--config", &config, "gen-toyset"])?;
    augmax::cli::run(["augmax", "--config", &config, "--threads", "1", "ablate"])
}

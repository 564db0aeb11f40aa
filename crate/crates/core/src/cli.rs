//! The `augmax` command line: dataset generation, training, evaluation and
//! the analysis commands, all driven by one [`ExperimentConfig`].
//!
//! Outputs land under `--out` (default `out_dir` from the config):
//!
//! | command           | writes                                                        |
//! |-------------------|---------------------------------------------------------------|
//! | `gen-toyset`      | `train.axd`, `test.axd` (+ `.json` manifests)                 |
//! | `train`           | `model.axc`, `train_log.csv`, `train_report.json`             |
//! | `eval`            | `eval/report.json`, `eval/cells.csv`                          |
//! | `corrupt`         | `corrupted/<kind>_s<severity>.axd`, `corrupted/suite.json`    |
//! | `attack-demo`     | `attack_demo/` PNGs, `summary.csv`, `loss_traces.csv`, `steps_histogram.csv` |
//! | `export-features` | `features.csv`                                                |
//! | `stats-report`    | `stats.txt`, `stats.csv`                                      |
//! | `ablate`          | `ablate/n<n>_k<k>_lambda<λ>/…`, `ablate/summary.csv`          |
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::adversary::{generate_augmax, AttackConfig};
use crate::augops::sample_chains;
use crate::config::ExperimentConfig;
use crate::data::{self, Dataset};
use crate::diffcore::loss::per_sample_cross_entropy;
use crate::diffcore::{checkpoint, Network};
use crate::error::{Error, Result};
use crate::mixer::{chain_outputs, mix};
use crate::model::{build, norm_stats, penultimate_features};
use crate::normlayers::NormRoute;
use crate::robustbench::{evaluate, mce, RobustnessReport};
use crate::seed::{self, derive_seed};
use crate::tensor::Tensor;
use crate::trainer::{fit_with, TrainConfig, TrainMode, TrainReport};

#[derive(Debug, Parser)]
#[command(name = "augmax", version, about = "Robust training with adversarially mixed augmentation chains")]
pub struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Baseline for mCE: a robustness report (JSON) or a checkpoint (AXC1).
    #[arg(long, global = true, value_name = "PATH")]
    pub baseline: Option<PathBuf>,
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Training mode override (normal, augmix, augmax, advmix, advmax, augmix_pgd).
    #[arg(long, global = true, value_name = "NAME")]
    pub mode: Option<String>,
    /// Checkpoint to load; defaults to `<out>/model.axc`.
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Render the procedural toyset to AXD1 containers.
    GenToyset,
    /// Train a model and write its checkpoint and log.
    Train,
    /// Clean and corrupted accuracy, optionally mCE against --baseline.
    Eval,
    /// Write every corrupted copy of the test set to disk.
    Corrupt,
    /// Attack test images and dump images, loss traces and step counts.
    AttackDemo,
    /// Penultimate-layer features of the test set.
    ExportFeatures,
    /// Running-variance table of the dual-branch norm layers.
    StatsReport,
    /// Train and evaluate every (n, k, λ) cell of the ablation grid.
    Ablate,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(&cli)
}

/// Process entry point: runs and maps errors to exit codes.
pub fn main_exit_code() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Config file plus command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(mode) = &cli.mode {
        cfg.train.mode = TrainMode::parse(mode)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no command given (see --help)".into()));
    };
    let threads = cli.threads.unwrap_or(0);
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| dispatch(command, cli, &cfg))
}

fn dispatch(command: Command, cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    match command {
        Command::GenToyset => gen_toyset(cli, cfg),
        Command::Train => train(cfg),
        Command::Eval => eval(cli, cfg),
        Command::Corrupt => corrupt(cfg),
        Command::AttackDemo => attack_demo(cli, cfg),
        Command::ExportFeatures => export_features(cli, cfg),
        Command::StatsReport => stats_report(cli, cfg),
        Command::Ablate => ablate(cfg),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value).expect("serializable") + "\n")
}

fn gen_toyset(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let (train_path, test_path) = match &cli.out {
        Some(dir) => (dir.join("train.axd"), dir.join("test.axd")),
        None => (cfg.data.train.clone(), cfg.data.test.clone()),
    };
    let toy = &cfg.data.toyset;
    let (train, test) = data::gen_toyset(toy, cfg.toyset_seed())?;
    let names = toy.class_names();
    data::save(&train, &train_path, &names, &format!("toyset train split, seed {}", cfg.seed))?;
    data::save(&test, &test_path, &names, &format!("toyset test split, seed {}", cfg.seed))?;
    println!(
        "wrote {} ({} images) and {} ({} images)",
        train_path.display(),
        train.len(),
        test_path.display(),
        test.len()
    );
    Ok(())
}

/// Loads a dataset and checks it fits the configured model.
fn load_dataset(path: &Path, cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = data::load(path)?;
    if ds.image_shape() != cfg.model.input_shape {
        return Err(Error::data(
            path,
            format!(
                "images are {:?} but model.input_shape is {:?}",
                ds.image_shape(),
                cfg.model.input_shape
            ),
        ));
    }
    if ds.classes != cfg.model.classes {
        return Err(Error::data(
            path,
            format!("{} classes but model.classes is {}", ds.classes, cfg.model.classes),
        ));
    }
    Ok(ds)
}

fn load_model(path: &Path, cfg: &ExperimentConfig) -> Result<Network> {
    let mut model = build(&cfg.model_config())?;
    checkpoint::load(&mut model, path)?;
    Ok(model)
}

fn checkpoint_path(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("model.axc"))
}

fn run_training(
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    out: &Path,
) -> Result<(Network, TrainReport)> {
    let mut model = build(&cfg.model_config())?;
    eprintln!("{}", crate::trainer::LOG_HEADER);
    let report = fit_with(&mut model, train, Some(test), train_cfg, Some(out), |e| eprintln!("{}", e.line()))?;
    write_json(&out.join("train_report.json"), &report)?;
    Ok((model, report))
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let train = load_dataset(&cfg.data.train, cfg)?;
    let test = load_dataset(&cfg.data.test, cfg)?;
    let (_, report) = run_training(cfg, &cfg.train_config(), &train, &test, &cfg.out_dir)?;
    let sa = report.epochs.last().and_then(|e| e.sa);
    println!(
        "trained {} epochs in {} mode ({:.1}s); SA {}; checkpoint {}",
        report.epochs.len(),
        report.mode.name(),
        report.seconds,
        sa.map_or_else(|| "n/a".into(), |v| format!("{v:.2}%")),
        cfg.out_dir.join("model.axc").display()
    );
    Ok(())
}

fn is_checkpoint(path: &Path) -> Result<bool> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.starts_with(checkpoint::MAGIC))
}

fn eval(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let test = load_dataset(&cfg.data.test, cfg)?;
    let suite = cfg.suite()?;
    let model = load_model(&checkpoint_path(cli, cfg), cfg)?;
    let mut report = evaluate(&model, &test, &suite)?;
    if let Some(baseline) = &cli.baseline {
        let base = if is_checkpoint(baseline)? {
            evaluate(&load_model(baseline, cfg)?, &test, &suite)?
        } else {
            RobustnessReport::load(baseline)?
        };
        report.mce = Some(mce(&report, &base)?);
    }
    let dir = cfg.out_dir.join("eval");
    report.save(&dir)?;
    let mut line = format!("SA {:.2}%  RA {:.2}%", report.sa, report.ra);
    if let Some(m) = report.mce {
        let _ = write!(line, "  mCE {m:.2}%");
    }
    println!("{line}  ({})", dir.join("report.json").display());
    Ok(())
}

fn corrupt(cfg: &ExperimentConfig) -> Result<()> {
    let test = load_dataset(&cfg.data.test, cfg)?;
    let suite = cfg.suite()?;
    let dir = cfg.out_dir.join("corrupted");
    let paths = crate::robustbench::materialize(&test, &suite, &dir)?;
    println!("wrote {} corrupted test sets to {}", paths.len(), dir.display());
    Ok(())
}

/// Writes a `[C, H, W]` image in `[0, 1]` as an 8-bit PNG (C = 1 or 3).
pub fn save_png(x: &Tensor, path: &Path) -> Result<()> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        ref s => return Err(Error::Input(format!("PNG export needs [1|3, H, W], got {s:?}"))),
    };
    let d = x.data();
    let mut bytes = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                bytes.push((d[(ch * h + y) * w + xx].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let color = if c == 3 { image::ExtendedColorType::Rgb8 } else { image::ExtendedColorType::L8 };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    image::save_buffer(path, &bytes, w as u32, h as u32, color)
        .map_err(|e| Error::data(path, format!("cannot write PNG: {e}")))
}

fn attack_demo(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let test = load_dataset(&cfg.data.test, cfg)?;
    let model = load_model(&checkpoint_path(cli, cfg), cfg)?;
    let dir = cfg.out_dir.join("attack_demo");
    let train = &cfg.train;
    let count = cfg.demo.samples.min(test.len());
    let mut summary = String::from("sample,label,augmix_loss,augmax_loss,steps_taken,m,weights\n");
    let mut traces = String::from("sample,step,loss\n");
    let mut histogram = vec![0usize; train.attack.n + 1];
    let (mut augmix_total, mut augmax_total) = (0.0, 0.0);
    for i in 0..count {
        let (x, label) = (test.image(i), test.labels[i]);
        let sample_seed = derive_seed(cfg.demo_seed(), "sample", i as u64);
        let chains = sample_chains(derive_seed(sample_seed, "chains", 0), train.chains);
        let outputs = chain_outputs(&x, &chains)?;
        let random = train.mixing.sample(train.chains, &mut seed::stream(sample_seed, "mix", 0))?;
        let augmix = mix(&x, &outputs, &random)?;
        let attack = AttackConfig {
            seed: derive_seed(sample_seed, "attack", 0),
            ..train.attack.clone()
        };
        let result = generate_augmax(&x, label, &model, &chains, &attack)?;
        let logits = model.infer(&Tensor::stack(&[augmix.clone(), result.x_star.clone()])?, NormRoute::Adversarial)?;
        let losses = per_sample_cross_entropy(&logits, &[label, label])?;
        augmix_total += losses[0];
        augmax_total += losses[1];
        histogram[result.steps_taken] += 1;
        let weights: Vec<String> = result.params.weights().iter().map(|w| w.to_string()).collect();
        let _ = writeln!(
            summary,
            "{i},{label},{},{},{},{},{}",
            losses[0],
            losses[1],
            result.steps_taken,
            result.params.m(),
            weights.join(";")
        );
        for (step, loss) in result.loss_trace.iter().enumerate() {
            let _ = writeln!(traces, "{i},{},{loss}", step + 1);
        }
        if i < cfg.demo.images {
            save_png(&x, &dir.join(format!("sample_{i:03}_original.png")))?;
            save_png(&augmix, &dir.join(format!("sample_{i:03}_augmix.png")))?;
            save_png(&result.x_star, &dir.join(format!("sample_{i:03}_augmax.png")))?;
        }
    }
    let mut hist = String::from("steps,count\n");
    for (steps, n) in histogram.iter().enumerate().skip(1) {
        let _ = writeln!(hist, "{steps},{n}");
    }
    write(&dir.join("summary.csv"), summary)?;
    write(&dir.join("loss_traces.csv"), traces)?;
    write(&dir.join("steps_histogram.csv"), hist)?;
    println!(
        "attacked {count} images: mean loss AugMix {:.4}, AugMax {:.4} ({})",
        augmix_total / count.max(1) as f64,
        augmax_total / count.max(1) as f64,
        dir.display()
    );
    Ok(())
}

/// `sample_id,label,f0,…` rows of penultimate features.
pub fn features_csv(model: &Network, ds: &Dataset) -> Result<String> {
    let mut out = String::new();
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(256) {
        let f = penultimate_features(model, &ds.images.select(chunk), NormRoute::Clean)?;
        if out.is_empty() {
            out.push_str("sample_id,label");
            for j in 0..f.row_len() {
                let _ = write!(out, ",f{j}");
            }
            out.push('\n');
        }
        for (r, &i) in chunk.iter().enumerate() {
            let _ = write!(out, "{i},{}", ds.labels[i]);
            for v in f.row(r) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn export_features(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let test = load_dataset(&cfg.data.test, cfg)?;
    let model = load_model(&checkpoint_path(cli, cfg), cfg)?;
    let path = cfg.out_dir.join("features.csv");
    write(&path, features_csv(&model, &test)?)?;
    println!("wrote features of {} images to {}", test.len(), path.display());
    Ok(())
}

/// Text table and CSV of the dual-branch running variances.
pub fn stats_tables(model: &Network) -> (String, String) {
    let stats = norm_stats(model);
    let mut text = String::new();
    let mut csv = String::from("layer,clean_var,adv_var\n");
    if stats.is_empty() {
        text.push_str("no dual-branch normalization layers\n");
    } else {
        let _ = writeln!(text, "{:<10} {:>12} {:>12}", "layer", "clean_var", "adv_var");
        for s in &stats {
            let _ = writeln!(text, "{:<10} {:>12.6} {:>12.6}", s.layer, s.clean_var, s.adv_var);
            let _ = writeln!(csv, "{},{},{}", s.layer, s.clean_var, s.adv_var);
        }
    }
    (text, csv)
}

fn stats_report(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let model = load_model(&checkpoint_path(cli, cfg), cfg)?;
    let (text, csv) = stats_tables(&model);
    write(&cfg.out_dir.join("stats.txt"), &text)?;
    write(&cfg.out_dir.join("stats.csv"), csv)?;
    print!("{text}");
    Ok(())
}

/// Directory name of one ablation cell.
pub fn ablation_cell_name(n: usize, k: usize, lambda: f32) -> String {
    format!("n{n}_k{k}_lambda{lambda}")
}

fn ablate(cfg: &ExperimentConfig) -> Result<()> {
    let cells = cfg.ablation.cells();
    let configs: Vec<TrainConfig> = cells
        .iter()
        .map(|&(n, k, lambda)| {
            let mut t = cfg.train_config();
            t.mode = TrainMode::Augmax;
            t.lambda = lambda;
            t.attack = AttackConfig { n, k, ..t.attack };
            t.epochs = cfg.ablation.epochs.unwrap_or(t.epochs);
            t.validate()
                .map_err(|e| Error::Config(format!("ablation cell n={n} k={k} lambda={lambda}: {e}")))?;
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let train = load_dataset(&cfg.data.train, cfg)?;
    let test = load_dataset(&cfg.data.test, cfg)?;
    let suite = cfg.suite()?;
    let root = cfg.out_dir.join("ablate");
    let mut summary = String::from("n,k,lambda,sa,ra,final_loss,mean_steps\n");
    for (&(n, k, lambda), t) in cells.iter().zip(&configs) {
        let dir = root.join(ablation_cell_name(n, k, lambda));
        eprintln!("ablation cell n={n} k={k} lambda={lambda}");
        let (model, report) = run_training(cfg, t, &train, &test, &dir)?;
        let robust = evaluate(&model, &test, &suite)?;
        robust.save(&dir)?;
        let last = report.epochs.last();
        let final_loss = last.map_or(f64::NAN, |e| e.total);
        let steps = last.and_then(|e| e.mean_steps).unwrap_or(f64::NAN);
        let _ = writeln!(summary, "{n},{k},{lambda},{},{},{final_loss},{steps}", robust.sa, robust.ra);
    }
    write(&root.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

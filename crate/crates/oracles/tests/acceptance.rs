//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! The verdicts are a report: the process exits 0 so the workspace test run
//! stays usable while a criterion is known to fail. Set `AUGMAX_STRICT=1` to
//! exit 1 when any criterion fails. A numeric argument list such as `1,5,7`
//! selects criteria.
//!
//! Trained toyset fixtures are cached under `CARGO_TARGET_TMPDIR`, so the
//! first run trains them and later runs reuse the checkpoints. Set
//! `AUGMAX_FULL_PROTOCOL=1` to run the full multi-seed robustness protocol
//! instead of projecting its runtime from measured throughput.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use augmax::adversary::{generate_augmax, AttackConfig, AttackResult};
use augmax::augops::sample_chains;
use augmax::data::{gen_toyset, ToysetConfig};
use augmax::diffcore::loss::cross_entropy_with_grad;
use augmax::diffcore::{Layer, Mode, OptimizerConfig, Sgd};
use augmax::mixer::{chain_outputs, mix, MixingDistribution};
use augmax::model::{build, ModelConfig};
use augmax::robustbench::{evaluate, mce, Cell, CorruptionKind, CorruptionSuite, RobustnessReport, SuiteConfig};
use augmax::seed::{self, derive_seed};
use augmax::trainer::{fit, js_divergence, TrainConfig, TrainMode};
use augmax::{NormKind, NormRoute, Result};
use augmax_oracles::cases::{constraint_sweep, find};
use augmax_oracles::checks::{
    losses, mixing_gradient_trials, random_tensor, reference_attack, small_model, two_chain_trial, FD_TOLERANCE,
};
use augmax_oracles::fixtures::{self, FIXTURE_EPOCHS};
use augmax_oracles::reference::js3;
use augmax_oracles::{run_case, Context};
use rand::Rng as _;

const SEED: u64 = 7;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        passed,
        detail: detail.into(),
    })
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("oracle-fixtures")
}

fn gradient_fidelity(_: &mut Context) -> Result<Verdict> {
    let started = Instant::now();
    let seeds: Vec<u64> = (0..10).map(|i| derive_seed(SEED, "gradient-fidelity", i)).collect();
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for norm in [NormKind::Bn, NormKind::Dubn, NormKind::Dubin] {
        let r = mixing_gradient_trials(norm, &seeds)?;
        worst = worst.max(r.worst);
        parts.push(format!("{norm:?} {:.2e}", r.worst));
    }
    let seconds = started.elapsed().as_secs_f64();
    verdict(
        worst < FD_TOLERANCE && seconds < 60.0,
        format!("max rel err {} (< 1e-3), {seconds:.1}s (< 60s)", parts.join(", ")),
    )
}

fn constraint_fidelity(_: &mut Context) -> Result<Verdict> {
    let (iterations, violations) = constraint_sweep(derive_seed(SEED, "constraints", 0), 10_000)?;
    verdict(
        violations.is_empty() && iterations >= 10_000,
        format!("{iterations} iterations, {} violations {:?}", violations.len(), violations.iter().take(3).collect::<Vec<_>>()),
    )
}

fn attack_semantics(_: &mut Context) -> Result<Verdict> {
    // a model whose output ignores its input and never predicts label 0
    let mut constant = small_model(NormKind::Dubin, derive_seed(SEED, "constant-model", 0));
    for (_, layer) in constant.layers_mut() {
        if let Layer::Dense(d) = layer {
            d.weight.data_mut().fill(0.0);
            d.bias.data_mut().copy_from_slice(&[0.0, 5.0, 0.0, 0.0]);
        }
    }
    let mut rng = seed::stream(SEED, "attack-semantics", 0);
    let x = random_tensor(&[3, 8, 8], 0.0, 1.0, &mut rng);
    let chains = sample_chains(derive_seed(SEED, "constant-chains", 0), 3);
    let cfg = AttackConfig {
        n: 10,
        k: 1,
        alpha: 0.1,
        seed: derive_seed(SEED, "constant-attack", 0),
    };
    let stopped = generate_augmax(&x, 0, &constant, &chains, &cfg)?.steps_taken;

    let mut over_budget = 0;
    let mut mismatches = Vec::new();
    let mut stop_counts = BTreeMap::new();
    for case in 0..100u64 {
        let mut rng = seed::stream(SEED, "reference-trace", case);
        let model = small_model(NormKind::Dubin, derive_seed(SEED, "trace-model", case));
        let x = random_tensor(&[3, 8, 8], 0.0, 1.0, &mut rng);
        let label = rng.random_range(0..4);
        let chains = sample_chains(derive_seed(SEED, "trace-chains", case), rng.random_range(1..=4));
        let n = rng.random_range(1..=10);
        let cfg = AttackConfig {
            n,
            k: rng.random_range(1..=n),
            alpha: [0.05, 0.1, 0.3][rng.random_range(0..3)],
            seed: derive_seed(SEED, "trace-attack", case),
        };
        let got: AttackResult = generate_augmax(&x, label, &model, &chains, &cfg)?;
        let want = reference_attack(&model, &x, label, &chain_outputs(&x, &chains)?, &cfg)?;
        if got.steps_taken > cfg.n {
            over_budget += 1;
        }
        *stop_counts.entry(if got.steps_taken < cfg.n { "early" } else { "full" }).or_insert(0) += 1;
        let trace_close = got.loss_trace.len() == want.losses.len()
            && got.loss_trace.iter().zip(&want.losses).all(|(a, b)| (a - b).abs() <= 1e-5);
        if got.steps_taken != want.steps || got.misclassified != want.misclassified || !trace_close || got.params != want.params {
            mismatches.push(case);
        }
    }
    verdict(
        stopped == 1 && over_budget == 0 && mismatches.is_empty(),
        format!(
            "constant misclassifier with k=1 stopped after {stopped} step(s); {over_budget} runs over n; \
             {} of 100 traces differ from the reference {mismatches:?}; stops {stop_counts:?}",
            mismatches.len()
        ),
    )
}

fn adversary_effectiveness(ctx: &mut Context) -> Result<Verdict> {
    let model = ctx.fixtures.trained(TrainMode::Normal)?.model.clone();
    let test = ctx.fixtures.data()?.test.clone();
    let dist = MixingDistribution::default();
    let (mut augmix, mut augmax) = (0.0, 0.0);
    for t in 0..200usize {
        let i = (t * 37) % test.len();
        let (x, label) = (test.image(i), test.labels[i]);
        let s = derive_seed(SEED, "paired", t as u64);
        let chains = sample_chains(s, 3);
        let outputs = chain_outputs(&x, &chains)?;
        let random = mix(&x, &outputs, &dist.sample(3, &mut seed::stream(s, "mix", 0))?)?;
        let attack = AttackConfig {
            k: 10,
            seed: derive_seed(s, "attack", 0),
            ..AttackConfig::default()
        };
        let learned = generate_augmax(&x, label, &model, &chains, &attack)?.x_star;
        let l = losses(&model, &[random, learned], label)?;
        augmix += l[0] / 200.0;
        augmax += l[1] / 200.0;
    }

    let mut reached = 0;
    let mut ratio = 0.0;
    for t in 0..50usize {
        let i = (t * 53 + 11) % test.len();
        let trial = two_chain_trial(&model, &test.image(i), test.labels[i], derive_seed(SEED, "grid-trial", t as u64), 10, 100, true)?;
        if trial.percentile_rank_reached(0.9) {
            reached += 1;
        }
        ratio += trial.attack_loss / trial.grid_max.expect("grid requested") / 50.0;
    }
    verdict(
        augmax > augmix && reached >= 45,
        format!(
            "paired mean loss AugMax {augmax:.4} vs AugMix {augmix:.4} over 200 samples; \
             90th percentile reached in {reached}/50 trials (need 45); mean attack/grid-max ratio {ratio:.3}"
        ),
    )
}

fn js_loss(_: &mut Context) -> Result<Verdict> {
    let mut rng = seed::stream(SEED, "js", 0);
    let mut identical: f64 = 0.0;
    let mut disjoint: f64 = 0.0;
    let mut oracle: f64 = 0.0;
    for _ in 0..100 {
        let c = rng.random_range(3..=10);
        let mut p: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        identical = identical.max(js_divergence(&p, &p, &p)?.abs());

        let picks: Vec<usize> = {
            let mut v: Vec<usize> = (0..c).collect();
            for i in 0..3 {
                let j = rng.random_range(i..c);
                v.swap(i, j);
            }
            v[..3].to_vec()
        };
        let hot = |k: usize| (0..c).map(|i| if i == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let (a, b, d) = (hot(picks[0]), hot(picks[1]), hot(picks[2]));
        disjoint = disjoint.max((js_divergence(&a, &b, &d)? - 3f64.ln()).abs());

        let draw = |rng: &mut seed::Rng| {
            let v: Vec<f64> = (0..c).map(|_| rng.random::<f64>().powi(2)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let (a, b, d) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        oracle = oracle.max((js_divergence(&a, &b, &d)? - js3(&a, &b, &d)).abs());
    }
    verdict(
        identical == 0.0 && disjoint <= 1e-6 && oracle <= 1e-6,
        format!("identical max {identical:e}; disjoint one-hots |JS - ln 3| {disjoint:.2e}; oracle |Δ| {oracle:.2e}"),
    )
}

fn route_isolation(route: NormRoute, norm: NormKind) -> Result<(bool, bool)> {
    let other = match route {
        NormRoute::Clean => NormRoute::Adversarial,
        NormRoute::Adversarial => NormRoute::Clean,
    };
    let mut model = small_model(norm, derive_seed(SEED, "routing-model", norm as u64));
    let snapshot = |m: &augmax::diffcore::Network, r| m.norm_layers().map(|(_, l)| l.running(r).cloned()).collect::<Vec<_>>();
    let frozen = snapshot(&model, other);
    let trained_before = snapshot(&model, route);
    let mut opt = Sgd::new(OptimizerConfig::default())?;
    let mut rng = seed::stream(SEED, "routing-steps", norm as u64);
    let mut untouched = true;
    for step in 0..100 {
        let x = random_tensor(&[8, 3, 8, 8], 0.0, 1.0, &mut rng);
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..4)).collect();
        model.zero_grad();
        let logits = model.forward(&x, route, Mode::Train)?;
        let (_, grad) = cross_entropy_with_grad(&logits, &labels, 1.0)?;
        model.backward(&grad)?;
        opt.step(&mut model, step, 100);
        untouched &= snapshot(&model, other) == frozen;
    }
    Ok((untouched, snapshot(&model, route) != trained_before))
}

fn normalization_routing(ctx: &mut Context) -> Result<Verdict> {
    let mut parts = Vec::new();
    let mut ok = true;
    for norm in [NormKind::Dubn, NormKind::Dubin] {
        for route in [NormRoute::Clean, NormRoute::Adversarial] {
            let (untouched, moved) = route_isolation(route, norm)?;
            ok &= untouched && moved;
            parts.push(format!("{norm:?}/{route:?} other-branch unchanged {untouched}, own moved {moved}"));
        }
    }
    let case = find("normlayers.dubin-forward.half-composition").expect("registered case");
    let record = run_case(&case, ctx);
    ok &= record.passed;
    parts.push(format!("DuBIN half-composition {}", if record.passed { "exact" } else { &record.actual }));
    verdict(ok, parts.join("; "))
}

fn report_with_errors(errors: &[f64]) -> Result<RobustnessReport> {
    let mut cells = Vec::new();
    for (i, kind) in CorruptionKind::ALL.into_iter().enumerate() {
        for severity in 1..=5u8 {
            cells.push(Cell {
                kind,
                severity,
                accuracy: 100.0 - errors[(i * 5 + severity as usize) % errors.len()],
            });
        }
    }
    RobustnessReport::from_cells(90.0, cells)
}

fn mce_protocol(_: &mut Context) -> Result<Verdict> {
    let baseline_errors: Vec<f64> = (0..45).map(|i| 2.0 * (3 + (i * 7) % 40) as f64).collect();
    let halved: Vec<f64> = baseline_errors.iter().map(|e| e / 2.0).collect();
    let baseline = report_with_errors(&baseline_errors)?;
    let target = report_with_errors(&halved)?;
    let own = mce(&baseline, &baseline)?;
    let half = mce(&target, &baseline)?;
    verdict(own == 100.0 && half == 50.0, format!("mce(baseline, baseline) = {own:?}; halved errors = {half:?}"))
}

/// Measured seconds per training sample at the protocol's model size.
fn seconds_per_sample(ctx: &mut Context, mode: TrainMode, norm: NormKind) -> Result<f64> {
    let data = ctx.fixtures.data()?.train.take_per_class(26);
    let mut model = build(&fixtures::model_config(norm))?;
    let cfg = TrainConfig {
        epochs: 1,
        ..fixtures::train_config(mode)
    };
    let started = Instant::now();
    fit(&mut model, &data, None, &cfg, None)?;
    let used = data.len() / cfg.batch_size * cfg.batch_size;
    Ok(started.elapsed().as_secs_f64() / used as f64)
}

const PROTOCOL_RUNS: [(TrainMode, NormKind); 3] = [
    (TrainMode::Normal, NormKind::Bn),
    (TrainMode::Augmix, NormKind::Bn),
    (TrainMode::Augmax, NormKind::Dubin),
];

struct Directional {
    ra: [f64; 3],
    sa: [f64; 3],
}

impl Directional {
    fn holds(&self) -> bool {
        self.ra[1] >= self.ra[0] + 5.0 && self.ra[2] >= self.ra[1] && self.sa[0] - self.sa[2] <= 2.0
    }

    fn describe(&self) -> String {
        format!(
            "RA normal {:.2} / augmix {:.2} / augmax-DuBIN {:.2}; SA {:.2} / {:.2} / {:.2}",
            self.ra[0], self.ra[1], self.ra[2], self.sa[0], self.sa[1], self.sa[2]
        )
    }
}

/// 5k/1k toyset, 50 epochs, seeds 1..=3, means over seeds.
fn full_protocol() -> Result<Directional> {
    let mut out = Directional { ra: [0.0; 3], sa: [0.0; 3] };
    for run_seed in 1..=3u64 {
        let toy = ToysetConfig {
            classes: 10,
            per_class: 500,
            test_per_class: None,
            size: 32,
        };
        let (train, test) = gen_toyset(&toy, derive_seed(run_seed, "toyset", 0))?;
        let suite = CorruptionSuite::new(&SuiteConfig {
            seed: derive_seed(run_seed, "suite", 0),
            ..Default::default()
        })?;
        for (slot, (mode, norm)) in PROTOCOL_RUNS.into_iter().enumerate() {
            let mut model = build(&ModelConfig {
                seed: derive_seed(run_seed, "model", 0),
                ..fixtures::model_config(norm)
            })?;
            let cfg = TrainConfig {
                mode,
                epochs: 50,
                seed: derive_seed(run_seed, "train", 0),
                ..TrainConfig::default()
            };
            fit(&mut model, &train, None, &cfg, None)?;
            let report = evaluate(&model, &test, &suite)?;
            out.ra[slot] += report.ra / 3.0;
            out.sa[slot] += report.sa / 3.0;
        }
    }
    Ok(out)
}

fn directional_robustness(ctx: &mut Context) -> Result<Verdict> {
    let budget = 2.0 * 3600.0;
    let mut projected = 0.0;
    let mut rates = Vec::new();
    for (mode, norm) in PROTOCOL_RUNS {
        let per_sample = seconds_per_sample(ctx, mode, norm)?;
        rates.push(format!("{} {:.1} ms", mode.name(), per_sample * 1e3));
        projected += per_sample * 5000.0 * 50.0 * 3.0;
    }
    if projected <= budget || std::env::var_os("AUGMAX_FULL_PROTOCOL").is_some() {
        let started = Instant::now();
        let d = full_protocol()?;
        let seconds = started.elapsed().as_secs_f64();
        return verdict(
            d.holds() && seconds <= budget,
            format!("full protocol {}; runtime {:.2} h (budget 2 h)", d.describe(), seconds / 3600.0),
        );
    }
    let test = ctx.fixtures.data()?.test.take_per_class(50);
    let suite = CorruptionSuite::new(&SuiteConfig {
        seed: derive_seed(SEED, "directional-suite", 0),
        ..Default::default()
    })?;
    let mut reduced = Directional { ra: [0.0; 3], sa: [0.0; 3] };
    for (slot, (mode, norm)) in PROTOCOL_RUNS.into_iter().enumerate() {
        let report = evaluate(&ctx.fixtures.trained_with(mode, norm)?.model, &test, &suite)?;
        reduced.ra[slot] = report.ra;
        reduced.sa[slot] = report.sa;
    }
    verdict(
        false,
        format!(
            "training throughput per sample {}; projected protocol runtime {:.1} h exceeds the 2 h budget \
             (set AUGMAX_FULL_PROTOCOL=1 to run it anyway); reduced scale (1k train, {FIXTURE_EPOCHS} epochs, one seed, \
             500 test images): {}; directional conditions {}",
            rates.join(", "),
            projected / 3600.0,
            reduced.describe(),
            if reduced.holds() { "hold" } else { "do not all hold" }
        ),
    )
}

/// A tiny experiment: 4 classes at 16×16, narrow model, one epoch.
fn tiny_config(dir: &Path) -> String {
    format!(
        r#"seed = 3
out_dir = "{out}"

[data]
train = "{data}/train.axd"
test = "{data}/test.axd"

[data.toyset]
classes = 4
per_class = 12
test_per_class = 6
size = 16

[model]
input_shape = [3, 16, 16]
classes = 4
norm = "dubin"
widths = [4, 6, 6]

[train]
mode = "augmax"
epochs = 1
batch_size = 8

[train.attack]
n = 3
k = 1
alpha = 0.1

[suite]
severities = [1, 3]

[ablation]
n = [5, 10]
k = [1, 2, 3]
lambda = [1.0, 10.0, 15.0]
epochs = 1

[demo]
samples = 4
images = 2
"#,
        out = dir.join("run").display(),
        data = dir.join("data").display()
    )
}

fn cli(config: &Path, args: &[&str]) -> Result<()> {
    let mut argv = vec!["augmax", "--config", config.to_str().expect("utf-8 path"), "--threads", "1"];
    argv.extend_from_slice(args);
    augmax::cli::run(argv)
}

fn ablation_harness(_: &mut Context) -> Result<Verdict> {
    let dir = tempfile::tempdir().map_err(|e| augmax::Error::io(Path::new("tempdir"), e))?;
    let config = dir.path().join("tiny.toml");
    fs::write(&config, tiny_config(dir.path())).map_err(|e| augmax::Error::io(&config, e))?;
    cli(&config, &["gen-toyset"])?;
    cli(&config, &["ablate"])?;
    let root = dir.path().join("run/ablate");
    let summary = fs::read_to_string(root.join("summary.csv")).map_err(|e| augmax::Error::io(&root, e))?;
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    let mut reports = 0;
    for entry in fs::read_dir(&root).map_err(|e| augmax::Error::io(&root, e))? {
        let path = entry.map_err(|e| augmax::Error::io(&root, e))?.path();
        if path.join("report.json").exists() && path.join("cells.csv").exists() {
            reports += 1;
        }
    }
    for row in &rows {
        println!("    ablation n,k,lambda,sa,ra,final_loss,mean_steps = {row}");
    }
    verdict(rows.len() == 18 && reports == 18, format!("{} summary rows, {reports} cell reports (need 18)", rows.len()))
}

fn snapshot(dir: &Path, into: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in fs::read_dir(dir).expect("readable output dir") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            snapshot(&path, into);
        } else {
            into.insert(path.clone(), fs::read(&path).expect("readable output file"));
        }
    }
}

const COMMANDS: [&str; 8] = [
    "gen-toyset",
    "train",
    "eval",
    "corrupt",
    "attack-demo",
    "export-features",
    "stats-report",
    "ablate",
];

fn run_all(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let config = dir.join("tiny.toml");
    fs::write(&config, tiny_config(dir)).map_err(|e| augmax::Error::io(&config, e))?;
    for command in COMMANDS {
        cli(&config, &[command])?;
    }
    let mut files = BTreeMap::new();
    snapshot(dir, &mut files);
    Ok(files)
}

fn determinism(_: &mut Context) -> Result<Verdict> {
    let dir = tempfile::tempdir().map_err(|e| augmax::Error::io(Path::new("tempdir"), e))?;
    let first = run_all(dir.path())?;
    for sub in ["data", "run"] {
        let path = dir.path().join(sub);
        fs::remove_dir_all(&path).map_err(|e| augmax::Error::io(&path, e))?;
    }
    let second = run_all(dir.path())?;
    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.strip_prefix(dir.path()).unwrap_or(k).display().to_string())
        .collect();
    verdict(
        differing.is_empty() && !first.is_empty(),
        format!("{} files from {} commands compared, {} differ {:?}", first.len(), COMMANDS.len(), differing.len(), differing),
    )
}

type Criterion = fn(&mut Context) -> Result<Verdict>;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("constraint fidelity", constraint_fidelity),
        ("attack loop semantics", attack_semantics),
        ("adversary effectiveness", adversary_effectiveness),
        ("JS loss", js_loss),
        ("normalization routing", normalization_routing),
        ("mCE protocol", mce_protocol),
        ("directional robustness", directional_robustness),
        ("ablation harness", ablation_harness),
        ("determinism", determinism),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-')).unwrap_or_default();
    let mut ctx = Context::new(SEED, Some(cache_dir()));
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.split(',').any(|f| f == id) {
            continue;
        }
        let started = Instant::now();
        let (passed, detail) = match run(&mut ctx) {
            Ok(v) => (v.passed, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "{} criterion {id} ({name}): {detail} [{:.1}s]",
            if passed { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
    println!("{failed} criteria failed");
    if failed > 0 && std::env::var_os("AUGMAX_STRICT").is_some() {
        std::process::exit(1);
    }
}

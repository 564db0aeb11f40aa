//! Outer minimization: the training objective
//!
//! ```text
//! L = ½·[CE(f(x*), y) + CE(f(x), y)] + λ·JS(f(x), f(x̃), f(x*))
//! ```
//!
//! where `x̃` is an AugMix image and `x*` is the hard image chosen by the
//! training mode (AugMax, AugMix, AdvMix, AdvMax or pixel PGD on `x̃`). The
//! clean forward uses the clean norm route, `x̃` and `x*` the adversarial one.
//! All three run in training mode so both statistics branches learn; the
//! adversary itself only queries the model in eval mode.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{self, AttackConfig, AttackTarget, WorstOfKConfig};
use crate::augops::sample_chains;
use crate::data::Dataset;
use crate::diffcore::loss::{cross_entropy_with_grad, log_softmax_rows, per_sample_cross_entropy};
use crate::diffcore::{checkpoint, Network, OptimizerConfig, Sgd};
use crate::error::{Error, Result};
use crate::mixer::{augmix_sample, chain_outputs, mix, MixingDistribution};
use crate::model::predict;
use crate::normlayers::NormRoute;
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Plain cross-entropy on clean images.
    Normal,
    /// A second AugMix draw plays the role of the hard image.
    Augmix,
    /// Learned worst-case mixing of random chains.
    Augmax,
    /// Worst-of-k chain hyperparameters, random mixing.
    Advmix,
    /// Worst-of-k chain hyperparameters, learned mixing.
    Advmax,
    /// Pixel PGD applied to the AugMix image.
    AugmixPgd,
}

impl TrainMode {
    pub const ALL: [TrainMode; 6] = [
        TrainMode::Normal,
        TrainMode::Augmix,
        TrainMode::Augmax,
        TrainMode::Advmix,
        TrainMode::Advmax,
        TrainMode::AugmixPgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Normal => "normal",
            TrainMode::Augmix => "augmix",
            TrainMode::Augmax => "augmax",
            TrainMode::Advmix => "advmix",
            TrainMode::Advmax => "advmax",
            TrainMode::AugmixPgd => "augmix_pgd",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown training mode '{name}' (expected one of {})", known.join(", ")))
            })
    }

    /// Whether the mode runs an eval-mode attack against the model.
    pub fn queries_model(self) -> bool {
        matches!(self, TrainMode::Augmax | TrainMode::Advmix | TrainMode::Advmax | TrainMode::AugmixPgd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdConfig {
    #[serde(default = "default_eps")]
    pub eps: f32,
    #[serde(default = "default_pgd_steps")]
    pub steps: usize,
    #[serde(default = "default_pgd_step_size")]
    pub step_size: f32,
}

fn default_eps() -> f32 {
    8.0 / 255.0
}

fn default_pgd_steps() -> usize {
    10
}

fn default_pgd_step_size() -> f32 {
    2.0 / 255.0
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            steps: default_pgd_steps(),
            step_size: default_pgd_step_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_mode")]
    pub mode: TrainMode,
    /// Weight of the Jensen-Shannon consistency term.
    #[serde(default = "default_lambda")]
    pub lambda: f32,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Number of augmentation chains `b`.
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Candidates of the worst-of-k search (advmix / advmax).
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default)]
    pub mixing: MixingDistribution,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub pgd: PgdConfig,
    /// Also write a checkpoint after every epoch.
    #[serde(default)]
    pub checkpoint_every_epoch: bool,
    /// Root of every per-sample stream; set programmatically.
    #[serde(skip)]
    pub seed: u64,
}

fn default_mode() -> TrainMode {
    TrainMode::Augmax
}

fn default_lambda() -> f32 {
    10.0
}

fn default_epochs() -> usize {
    30
}

fn default_batch_size() -> usize {
    64
}

fn default_chains() -> usize {
    3
}

fn default_candidates() -> usize {
    5
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            lambda: default_lambda(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            chains: default_chains(),
            candidates: default_candidates(),
            mixing: MixingDistribution::default(),
            optimizer: OptimizerConfig::default(),
            attack: AttackConfig::default(),
            pgd: PgdConfig::default(),
            checkpoint_every_epoch: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2 for batch statistics, got {}",
                self.batch_size
            )));
        }
        if self.chains == 0 {
            return Err(Error::Config("chains must be >= 1".into()));
        }
        if self.candidates == 0 {
            return Err(Error::Config("candidates must be >= 1".into()));
        }
        self.mixing.validate()?;
        self.optimizer.validate()?;
        self.attack.validate()?;
        if !(self.pgd.eps >= 0.0 && self.pgd.step_size > 0.0) {
            return Err(Error::Config(format!("invalid PGD settings {:?}", self.pgd)));
        }
        Ok(())
    }

    fn worst_of_k(&self) -> WorstOfKConfig {
        WorstOfKConfig {
            candidates: self.candidates,
            chains: self.chains,
            mixing: self.mixing.clone(),
        }
    }
}

/// `(KL(p1‖M) + KL(p2‖M) + KL(p3‖M)) / 3` with `M` the mean distribution.
/// Inputs are renormalized; negative entries are rejected.
pub fn js_divergence(p1: &[f64], p2: &[f64], p3: &[f64]) -> Result<f64> {
    if p1.is_empty() || p1.len() != p2.len() || p1.len() != p3.len() {
        return Err(Error::Input(format!(
            "distributions must be non-empty and equally long, got {}, {}, {}",
            p1.len(),
            p2.len(),
            p3.len()
        )));
    }
    let mut ps = [p1.to_vec(), p2.to_vec(), p3.to_vec()];
    for p in &mut ps {
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        if total <= 0.0 {
            return Err(Error::Input("probabilities sum to zero".into()));
        }
        p.iter_mut().for_each(|v| *v /= total);
    }
    let mut js = 0.0;
    for c in 0..p1.len() {
        // offsets from the first input keep M exact when the inputs agree
        let m = ps[0][c] + ((ps[1][c] - ps[0][c]) + (ps[2][c] - ps[0][c])) / 3.0;
        for p in &ps {
            if p[c] > 0.0 {
                js += p[c] * (p[c] / m).ln();
            }
        }
    }
    Ok((js / 3.0).max(0.0))
}

/// JS of three logit rows and its gradient w.r.t. each row.
fn js_from_log_probs(lp: [&[f64]; 3]) -> (f64, [Vec<f64>; 3]) {
    let classes = lp[0].len();
    let mut log_m = vec![0.0; classes];
    for (c, lm) in log_m.iter_mut().enumerate() {
        let top = lp[0][c].max(lp[1][c]).max(lp[2][c]);
        let sum: f64 = lp.iter().map(|l| (l[c] - top).exp()).sum();
        *lm = top + (sum / 3.0).ln();
    }
    let mut js = 0.0;
    let grads = lp.map(|l| {
        let p: Vec<f64> = l.iter().map(|v| v.exp()).collect();
        // d JS / d p_c = (ln p_c - ln M_c) / 3, then through the softmax
        let g: Vec<f64> = (0..classes).map(|c| (l[c] - log_m[c]) / 3.0).collect();
        js += (0..classes).map(|c| p[c] * (l[c] - log_m[c])).sum::<f64>() / 3.0;
        let dot: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        (0..classes).map(|c| p[c] * (g[c] - dot)).collect()
    });
    (js.max(0.0), grads)
}

/// A minibatch with per-sample ids and seeds.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// Dataset index of each sample, used in diagnostics.
    pub ids: Vec<usize>,
    /// Root seed of each sample's augmentation streams.
    pub seeds: Vec<u64>,
}

impl Batch {
    /// Gathers `indices` from `ds`; sample seeds derive from
    /// `(seed, "sample", epoch · len + position)`.
    pub fn gather(ds: &Dataset, indices: &[usize], seed: u64, epoch: usize, first_position: usize) -> Self {
        Self {
            images: ds.images.select(indices),
            labels: indices.iter().map(|&i| ds.labels[i]).collect(),
            ids: indices.to_vec(),
            seeds: (0..indices.len())
                .map(|j| seed::derive_seed(seed, "sample", (epoch * ds.len() + first_position + j) as u64))
                .collect(),
        }
    }
}

/// Loss components of one step (batch means).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ce_clean: f64,
    pub ce_adv: f64,
    pub js: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub losses: LossParts,
    pub lr: f32,
    /// Samples forwarded on the clean route in training mode.
    pub clean_forwards: usize,
    /// Samples forwarded on the adversarial route in training mode.
    pub adversarial_forwards: usize,
    /// Samples for which an attack queried the model.
    pub adversary_calls: usize,
    /// Attack steps per sample (AugMax / AdvMax modes).
    pub steps_taken: Vec<usize>,
    /// Logits of the step's training forwards: clean, then AugMix and hard
    /// images outside normal mode.
    #[serde(skip)]
    pub logits: Vec<Tensor>,
}

/// The hard image `x*` for every sample, plus attack bookkeeping.
fn hard_images(
    model: &Network,
    batch: &Batch,
    augmix: &[Tensor],
    cfg: &TrainConfig,
) -> Result<(Vec<Tensor>, usize, Vec<usize>)> {
    let n = batch.labels.len();
    let x: Vec<Tensor> = (0..n).map(|i| batch.images.item(i)).collect();
    let attack = |i: usize| AttackConfig {
        seed: seed::derive_seed(batch.seeds[i], "attack", 0),
        ..cfg.attack.clone()
    };
    match cfg.mode {
        TrainMode::Normal => unreachable!("normal mode has no hard image"),
        TrainMode::Augmix => {
            let images = (0..n)
                .into_par_iter()
                .map(|i| {
                    let s = seed::derive_seed(batch.seeds[i], "augmix", 1);
                    augmix_sample(&x[i], s, cfg.chains, &cfg.mixing).map(|a| a.image)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((images, 0, Vec::new()))
        }
        TrainMode::Augmax | TrainMode::Advmax => {
            let outputs = (0..n)
                .into_par_iter()
                .map(|i| {
                    let s = seed::derive_seed(batch.seeds[i], "chains", 0);
                    if cfg.mode == TrainMode::Augmax {
                        chain_outputs(&x[i], &sample_chains(s, cfg.chains))
                    } else {
                        adversary::worst_of_k_chains(&x[i], batch.labels[i], model, &cfg.worst_of_k(), s)
                            .map(|w| w.outputs)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<AttackTarget> = (0..n)
                .map(|i| AttackTarget {
                    x: &x[i],
                    label: batch.labels[i],
                    outputs: &outputs[i],
                    seed: attack(i).seed,
                })
                .collect();
            let results = adversary::generate_augmax_batch(&targets, model, &cfg.attack)?;
            let steps = results.iter().map(|r| r.steps_taken).collect();
            Ok((results.into_iter().map(|r| r.x_star).collect(), n, steps))
        }
        TrainMode::Advmix => {
            let images = (0..n)
                .into_par_iter()
                .map(|i| {
                    let s = seed::derive_seed(batch.seeds[i], "chains", 0);
                    let w = adversary::worst_of_k_chains(&x[i], batch.labels[i], model, &cfg.worst_of_k(), s)?;
                    mix(&x[i], &w.outputs, &w.params)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((images, n, Vec::new()))
        }
        TrainMode::AugmixPgd => {
            let base = Tensor::stack(augmix)?;
            let adv = adversary::pgd_pixels(&base, &batch.labels, model, cfg.pgd.eps, cfg.pgd.steps, cfg.pgd.step_size)?;
            Ok(((0..n).map(|i| adv.item(i)).collect(), n, Vec::new()))
        }
    }
}

fn non_finite(batch: &Batch, logits: [&Tensor; 3], parts: &LossParts) -> Error {
    let bad = (0..batch.labels.len()).find(|&i| logits.iter().any(|l| l.row(i).iter().any(|v| !v.is_finite())));
    let sample = match bad {
        Some(i) => format!("sample {}", batch.ids[i]),
        None => "no single sample".to_string(),
    };
    Error::Numerical(format!(
        "non-finite training loss ({sample}): total={}, ce_clean={}, ce_adv={}, js={}",
        parts.total, parts.ce_clean, parts.ce_adv, parts.js
    ))
}

/// One optimizer update on `batch`.
pub fn train_step(
    model: &mut Network,
    optimizer: &mut Sgd,
    batch: &Batch,
    cfg: &TrainConfig,
    step_index: usize,
    total_steps: usize,
) -> Result<StepReport> {
    let n = batch.labels.len();
    if n < 2 {
        return Err(Error::Input(format!("training batch needs at least 2 samples, got {n}")));
    }
    let mut report = StepReport::default();
    model.zero_grad();

    if cfg.mode == TrainMode::Normal {
        let (logits, tape) = model.forward_train(&batch.images, NormRoute::Clean)?;
        let (ce, grad) = cross_entropy_with_grad(&logits, &batch.labels, 1.0)?;
        let ce = ce as f64;
        report.losses = LossParts {
            total: ce,
            ce_clean: ce,
            ce_adv: ce,
            js: 0.0,
        };
        if !ce.is_finite() {
            return Err(non_finite(batch, [&logits, &logits, &logits], &report.losses));
        }
        model.accumulate_grads(&tape, &grad)?;
        report.clean_forwards = n;
        report.logits = vec![logits];
    } else {
        let augmix = (0..n)
            .into_par_iter()
            .map(|i| {
                let s = seed::derive_seed(batch.seeds[i], "augmix", 0);
                augmix_sample(&batch.images.item(i), s, cfg.chains, &cfg.mixing).map(|a| a.image)
            })
            .collect::<Result<Vec<_>>>()?;
        let (hard, calls, steps) = hard_images(model, batch, &augmix, cfg)?;
        report.adversary_calls = calls;
        report.steps_taken = steps;

        let (logits_c, tape_c) = model.forward_train(&batch.images, NormRoute::Clean)?;
        let (logits_t, tape_t) = model.forward_train(&Tensor::stack(&augmix)?, NormRoute::Adversarial)?;
        let (logits_h, tape_h) = model.forward_train(&Tensor::stack(&hard)?, NormRoute::Adversarial)?;
        report.clean_forwards = n;
        report.adversarial_forwards = 2 * n;

        let (ce_c, mut grad_c) = cross_entropy_with_grad(&logits_c, &batch.labels, 0.5)?;
        let (ce_h, mut grad_h) = cross_entropy_with_grad(&logits_h, &batch.labels, 0.5)?;
        let mut grad_t = Tensor::zeros(logits_t.shape());
        let (lc, lt, lh) = (log_softmax_rows(&logits_c), log_softmax_rows(&logits_t), log_softmax_rows(&logits_h));
        let lambda = cfg.lambda as f64;
        let mut js = 0.0;
        for i in 0..n {
            let (v, [gc, gt, gh]) = js_from_log_probs([&lc[i], &lt[i], &lh[i]]);
            js += v;
            let scale = lambda / n as f64;
            for (dst, g) in [(grad_c.row_mut(i), gc), (grad_t.row_mut(i), gt), (grad_h.row_mut(i), gh)] {
                for (d, v) in dst.iter_mut().zip(g) {
                    *d += (scale * v) as f32;
                }
            }
        }
        let js = js / n as f64;
        let (ce_c, ce_h) = (ce_c as f64, ce_h as f64);
        report.losses = LossParts {
            total: 0.5 * (ce_c + ce_h) + lambda * js,
            ce_clean: ce_c,
            ce_adv: ce_h,
            js,
        };
        if !report.losses.total.is_finite() {
            return Err(non_finite(batch, [&logits_c, &logits_t, &logits_h], &report.losses));
        }
        model.accumulate_grads(&tape_c, &grad_c)?;
        model.accumulate_grads(&tape_t, &grad_t)?;
        model.accumulate_grads(&tape_h, &grad_h)?;
        report.logits = vec![logits_c, logits_t, logits_h];
    }

    if model.grads().iter().any(|g| !g.all_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite parameter gradient at step {step_index} (samples {:?})",
            batch.ids
        )));
    }
    report.lr = optimizer.step(model, step_index, total_steps);
    Ok(report)
}

/// Recomputes a step's loss components from scratch, without the fused
/// gradient code, given the same images. Useful for checking
/// [`train_step`] bookkeeping.
pub fn recompute_losses(
    logits_clean: &Tensor,
    logits_augmix: &Tensor,
    logits_hard: &Tensor,
    labels: &[usize],
    lambda: f64,
) -> Result<LossParts> {
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let ce_clean = mean(per_sample_cross_entropy(logits_clean, labels)?);
    let ce_adv = mean(per_sample_cross_entropy(logits_hard, labels)?);
    let probs = |t: &Tensor| -> Vec<Vec<f64>> {
        log_softmax_rows(t).into_iter().map(|r| r.into_iter().map(f64::exp).collect()).collect()
    };
    let (pc, pt, ph) = (probs(logits_clean), probs(logits_augmix), probs(logits_hard));
    let mut js = 0.0;
    for i in 0..labels.len() {
        js += js_divergence(&pc[i], &pt[i], &ph[i])?;
    }
    let js = js / labels.len() as f64;
    Ok(LossParts {
        total: 0.5 * (ce_clean + ce_adv) + lambda * js,
        ce_clean,
        ce_adv,
        js,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f32,
    pub total: f64,
    pub ce_clean: f64,
    pub ce_adv: f64,
    pub js: f64,
    /// Clean accuracy (%) on the held-out split, when one was given.
    pub sa: Option<f64>,
    pub clean_forwards: usize,
    pub adversarial_forwards: usize,
    pub adversary_calls: usize,
    /// Mean attack steps per sample, when the mode runs the mixing attack.
    pub mean_steps: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch,lr,total,ce_clean,ce_adv,js,sa";

impl EpochLog {
    pub fn line(&self) -> String {
        let sa = self.sa.map_or_else(|| "nan".to_string(), |v| format!("{v:.4}"));
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.epoch, self.lr, self.total, self.ce_clean, self.ce_adv, self.js, sa
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub epochs: Vec<EpochLog>,
    pub checkpoint: Option<PathBuf>,
    /// Wall-clock time; not serialized so report files stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

impl TrainReport {
    /// The log as written to `train_log.csv`.
    pub fn log_text(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(out, "{}", e.line());
        }
        out
    }
}

/// Accuracy (%) of `model` on `ds` with the clean route, in batches.
pub fn accuracy(model: &Network, ds: &Dataset, batch_size: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let preds = predict(model, &ds.images.select(chunk), NormRoute::Clean)?;
        correct += chunk.iter().zip(&preds).filter(|(&i, &p)| ds.labels[i] == p).count();
    }
    Ok(100.0 * correct as f64 / ds.len() as f64)
}

/// Trains for `cfg.epochs` epochs of seeded-shuffled minibatches. Partial
/// final batches are dropped; a dataset smaller than the batch size is used
/// as a single batch. With `out` set, writes `model.axc` and
/// `train_log.csv` there (plus `epoch_NNN.axc` when requested).
pub fn fit(
    model: &mut Network,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainReport> {
    fit_with(model, train, test, cfg, out, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    model: &mut Network,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if train.image_shape()[..] != model.input_shape()[..] {
        return Err(Error::Input(format!(
            "dataset images {:?} do not match model input {:?}",
            train.image_shape(),
            model.input_shape()
        )));
    }
    let batch = cfg.batch_size.min(train.len());
    if batch < 2 {
        return Err(Error::Input("training set needs at least 2 samples".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let started = Instant::now();
    let per_epoch = train.len() / batch;
    let total_steps = per_epoch * cfg.epochs;
    let mut optimizer = Sgd::new(cfg.optimizer.clone())?;
    let mut report = TrainReport {
        mode: cfg.mode,
        epochs: Vec::with_capacity(cfg.epochs),
        checkpoint: None,
        seconds: 0.0,
    };
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::stream(cfg.seed, "shuffle", epoch as u64));
        let mut sums = LossParts::default();
        let mut log = EpochLog {
            epoch: epoch + 1,
            lr: 0.0,
            total: 0.0,
            ce_clean: 0.0,
            ce_adv: 0.0,
            js: 0.0,
            sa: None,
            clean_forwards: 0,
            adversarial_forwards: 0,
            adversary_calls: 0,
            mean_steps: None,
        };
        let mut steps_taken = Vec::new();
        for b in 0..per_epoch {
            let indices = &order[b * batch..(b + 1) * batch];
            let mb = Batch::gather(train, indices, cfg.seed, epoch, b * batch);
            let r = train_step(model, &mut optimizer, &mb, cfg, step, total_steps)?;
            step += 1;
            sums.total += r.losses.total;
            sums.ce_clean += r.losses.ce_clean;
            sums.ce_adv += r.losses.ce_adv;
            sums.js += r.losses.js;
            log.lr = r.lr;
            log.clean_forwards += r.clean_forwards;
            log.adversarial_forwards += r.adversarial_forwards;
            log.adversary_calls += r.adversary_calls;
            steps_taken.extend(r.steps_taken);
        }
        let k = per_epoch as f64;
        log.total = sums.total / k;
        log.ce_clean = sums.ce_clean / k;
        log.ce_adv = sums.ce_adv / k;
        log.js = sums.js / k;
        if !steps_taken.is_empty() {
            log.mean_steps = Some(steps_taken.iter().sum::<usize>() as f64 / steps_taken.len() as f64);
        }
        if let Some(test) = test {
            log.sa = Some(accuracy(model, test, 256)?);
        }
        if let (Some(dir), true) = (out, cfg.checkpoint_every_epoch) {
            checkpoint::save(model, &dir.join(format!("epoch_{:03}.axc", epoch + 1)))?;
        }
        on_epoch(&log);
        report.epochs.push(log);
    }
    if let Some(dir) = out {
        let path = dir.join("model.axc");
        checkpoint::save(model, &path)?;
        let log_path = dir.join("train_log.csv");
        fs::write(&log_path, report.log_text()).map_err(|e| Error::io(&log_path, e))?;
        report.checkpoint = Some(path);
    }
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

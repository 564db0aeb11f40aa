//! The case registry.
//!
//! [`oracles`] holds exactly one case per reference check of the library;
//! [`invariants`] holds cross-module properties that need a trained model or a
//! full training run. Identifiers are stable and never reused.

use augmax::adversary::{
    advmax, advmix, generate_augmax_observed, pgd_pixels, worst_of_k_chains, AttackConfig, AttackTarget, WorstOfKConfig,
};
use augmax::augops::{apply_op, resample_severities, sample_chain, sample_chains, AugOp, OpKind, REGISTRY};
use augmax::data::Dataset;
use augmax::diffcore::loss::{cross_entropy_with_grad, one_hot};
use augmax::diffcore::{cross_entropy, Conv2d, Dense, Layer, Mode, Network, OptimizerConfig, Sgd};
use augmax::mixer::{augmix_sample, chain_outputs, mix, softmax_reparam, softmax_vjp, MixParams, MixingDistribution};
use augmax::model::{build, loss_and_input_grad, norm_stats, penultimate_features, ModelConfig};
use augmax::normlayers::NormLayer;
use augmax::robustbench::{corrupt, evaluate, mce, Cell, CorruptionKind, CorruptionSuite, RobustnessReport, SuiteConfig};
use augmax::seed::{self, Rng};
use augmax::trainer::{fit_with, js_divergence, train_step, Batch, TrainConfig, TrainMode};
use augmax::{NormKind, NormRoute, Result, Tensor};
use rand::Rng as _;

use crate::checks::{
    losses, mixing_gradient_trials, random_tensor, small_model, two_chain_trial, FD_FLOOR, FD_STEP, FD_TOLERANCE,
};
use crate::reference::{
    cross_entropy_row, js3, mean_cross_entropy, mix as ref_mix, normalize, rel_err, softmax, to_f64, Act,
    RefLayer, RefNet,
};
use crate::{Context, OracleCase, OracleKind, Outcome};

/// Reference checks, one per documented oracle.
pub fn oracles() -> Vec<OracleCase> {
    use OracleKind::*;
    let case = |id, module, operation, kind, tolerance, trained, run| OracleCase {
        id,
        module,
        operation,
        kind,
        tolerance,
        trained,
        run,
    };
    vec![
        case("diffcore.forward.direct-convolution", "diffcore", "forward", ScalarLoop, "1e-5 abs", false, forward_direct_convolution),
        case("diffcore.cross-entropy.log-sum-exp", "diffcore", "cross_entropy", ScalarLoop, "1e-5 rel above 1", false, cross_entropy_log_sum_exp),
        case("diffcore.backward.parameter-fd", "diffcore", "backward", FiniteDifference, "rel 1e-3, eps 1e-3", false, backward_parameter_fd),
        case("augops.apply-op.rotate-interior", "augops", "apply_op", ScalarLoop, "2/255 per pixel", false, rotate_interior),
        case("augops.sample-chain.length-frequency", "augops", "sample_chain", MonteCarlo, "±0.03 of 1/3", false, chain_length_frequency),
        case("augops.sample-chain.kind-frequency", "augops", "sample_chain", MonteCarlo, "±0.02 of 1/9", false, chain_kind_frequency),
        case("augops.apply-chain.manual-composition", "augops", "apply_chain", ScalarLoop, "exact", false, chain_manual_composition),
        case("mixer.softmax.jacobian-fd", "mixer", "softmax_reparam", FiniteDifference, "1e-4 abs", false, softmax_jacobian_fd),
        case("mixer.mix.per-pixel", "mixer", "mix", ScalarLoop, "1e-6 abs", false, mix_per_pixel),
        case("mixer.mix-backward.model-fd", "mixer", "mix_backward", FiniteDifference, "rel 1e-3, eps 1e-3", false, mix_backward_model_fd),
        case("mixer.augmix-sample.beta-mean", "mixer", "augmix_sample", MonteCarlo, "0.5 ± 0.02", false, augmix_beta_mean),
        case("adversary.generate-augmax.random-median", "adversary", "generate_augmax", MonteCarlo, ">= 90% of 50 trials", true, augmax_beats_random_median),
        case("adversary.pgd-pixels.ball-and-ascent", "adversary", "pgd_pixels", MonteCarlo, "eps + 1e-7; >= 90% of trials", true, pgd_ball_and_ascent),
        case("adversary.worst-of-k.max-reevaluated", "adversary", "worst_of_k_chains", Recomputation, "exact", false, worst_of_k_max),
        case("adversary.worst-of-k.monotone-in-k", "adversary", "worst_of_k_chains", MonteCarlo, "mean k=5 >= mean k=1", true, worst_of_k_monotone),
        case("adversary.advmax.loss-ordering", "adversary", "advmix/advmax", MonteCarlo, "advmax >= advmix >= augmix", true, adversary_loss_ordering),
        case("normlayers.bn-forward.eval-scalar-loop", "normlayers", "bn_forward", ScalarLoop, "1e-6 abs", false, bn_eval_scalar_loop),
        case("normlayers.in-forward.scalar-loop", "normlayers", "in_forward", ScalarLoop, "1e-6 abs", false, in_scalar_loop),
        case("normlayers.dubin-forward.half-composition", "normlayers", "dubin_forward", Recomputation, "exact", false, dubin_half_composition),
        case("normlayers.stats-report.channel-mean", "normlayers", "stats_report", Recomputation, "exact", false, stats_report_channel_mean),
        case("model.build.parameter-count", "model", "build", Recomputation, "exact", false, parameter_count),
        case("model.loss-and-input-grad.pixel-fd", "model", "loss_and_input_grad", FiniteDifference, "rel 1e-3, eps 1e-3", false, input_grad_pixel_fd),
        case("model.penultimate-features.truncated-forward", "model", "penultimate_features", Recomputation, "exact", false, penultimate_truncated),
        case("trainer.js-divergence.high-precision", "trainer", "js_divergence", ScalarLoop, "1e-6 abs", false, js_high_precision),
        case("trainer.train-step.recomputed-total", "trainer", "train_step", Recomputation, "1e-5 abs", false, train_step_recomputed),
        case("trainer.fit.normal-calibration", "trainer", "fit", Recomputation, "train accuracy >= 95%", true, normal_train_calibration),
        case("robustbench.corrupt.gaussian-std", "robustbench", "corrupt", MonteCarlo, "±5% of 0.04·s", false, gaussian_noise_std),
        case("robustbench.evaluate.ra-from-cells", "robustbench", "evaluate", Recomputation, "exact", false, ra_from_cells),
        case("robustbench.mce.spreadsheet", "robustbench", "mce", Recomputation, "1e-6 abs", false, mce_spreadsheet),
        case("cli.gen-toyset.calibration-sa", "cli", "gen_toyset", Recomputation, "test SA >= 90%", true, toyset_calibration_sa),
        case("cli.train-eval.augmix-over-normal", "cli", "train/eval", MonteCarlo, "RA strictly greater", true, augmix_ra_over_normal),
        case("proptests.run-suite.finite-difference-family", "proptests", "run_suite", FiniteDifference, "all pass", false, finite_difference_family),
        case("proptests.grid-oracle.two-chains", "proptests", "grid oracle", GridSearch, "grid step 0.02", true, two_chain_grid_oracle),
    ]
}

/// Cross-module invariants.
pub fn invariants() -> Vec<OracleCase> {
    use OracleKind::*;
    vec![
        OracleCase {
            id: "invariant.robustbench.noise-monotone",
            module: "robustbench",
            operation: "evaluate",
            kind: MonteCarlo,
            tolerance: "2 points slack",
            trained: true,
            run: noise_monotone,
        },
        OracleCase {
            id: "invariant.trainer.accounting",
            module: "trainer",
            operation: "fit",
            kind: Recomputation,
            tolerance: "1e-5 abs; exact counts",
            trained: false,
            run: training_accounting,
        },
        OracleCase {
            id: "invariant.adversary.constraints",
            module: "adversary",
            operation: "generate_augmax",
            kind: MonteCarlo,
            tolerance: "m in [0,1] exactly; sum w within 1e-6",
            trained: false,
            run: attack_constraints,
        },
    ]
}

/// Oracles followed by invariants.
pub fn all() -> Vec<OracleCase> {
    let mut v = oracles();
    v.extend(invariants());
    v
}

pub fn find(id: &str) -> Option<OracleCase> {
    all().into_iter().find(|c| c.id == id)
}

fn fill(t: &mut Tensor, lo: f32, hi: f32, rng: &mut Rng) {
    for v in t.data_mut() {
        *v = rng.random_range(lo..hi);
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6e}")
}

fn forward_direct_convolution(ctx: &mut Context) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for t in 0..5 {
        let mut rng = seed::stream(ctx.seed, "forward-conv", t);
        let mut c1 = Conv2d::new(3, 4, 3)?;
        let mut c2 = Conv2d::new(4, 5, 3)?;
        fill(&mut c1.weight, -0.5, 0.5, &mut rng);
        fill(&mut c2.weight, -0.5, 0.5, &mut rng);
        let net = Network::new(
            vec![3, 7, 9],
            vec![
                ("conv1".into(), Layer::Conv2d(c1)),
                ("relu".into(), Layer::Relu),
                ("conv2".into(), Layer::Conv2d(c2)),
            ],
        );
        let x = random_tensor(&[2, 3, 7, 9], 0.0, 1.0, &mut rng);
        let y = net.infer(&x, NormRoute::Clean)?;
        let r = RefNet::from_network(&net).forward(&Act::from_tensor(&x), NormRoute::Clean, false);
        worst = worst.max(r.output.max_abs_diff(&y));
    }
    Ok(Outcome::new(
        worst <= 1e-5,
        "5 random conv(3→4)-relu-conv(4→5) models on 2×3×7×9 inputs",
        "max |Δ| <= 1e-5",
        fmt_f(worst),
    ))
}

fn cross_entropy_log_sum_exp(ctx: &mut Context) -> Result<Outcome> {
    let mut rng = ctx.rng("cross-entropy");
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=8);
        let c = rng.random_range(2..=12);
        let scale = [1.0f32, 10.0, 30.0][rng.random_range(0..3)];
        let logits = random_tensor(&[n, c], -scale, scale, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let got = cross_entropy(&logits, &one_hot(&labels, c)?)? as f64;
        let want = mean_cross_entropy(&Act::from_tensor(&logits), &labels);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    Ok(Outcome::new(worst <= 1e-5, "50 random instances, logits up to ±30", "error <= 1e-5", fmt_f(worst)))
}

/// conv(3→4) → BN → relu → global pool → dense(4→3), training mode.
fn two_layer_model(rng: &mut Rng) -> Result<Network> {
    let mut conv = Conv2d::new(3, 4, 3)?;
    fill(&mut conv.weight, -0.6, 0.6, rng);
    let mut norm = NormLayer::new(NormKind::Bn, 4)?;
    fill(&mut norm.gamma, 0.5, 1.5, rng);
    fill(&mut norm.beta, -0.3, 0.3, rng);
    let mut dense = Dense::new(4, 3);
    fill(&mut dense.weight, -1.0, 1.0, rng);
    fill(&mut dense.bias, -0.2, 0.2, rng);
    Ok(Network::new(
        vec![3, 6, 6],
        vec![
            ("conv".into(), Layer::Conv2d(conv)),
            ("norm".into(), Layer::Norm(norm)),
            ("relu".into(), Layer::Relu),
            ("gap".into(), Layer::GlobalAvgPool),
            ("flatten".into(), Layer::Flatten),
            ("fc".into(), Layer::Dense(dense)),
        ],
    ))
}

fn backward_parameter_fd(ctx: &mut Context) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0usize, 0usize);
    for s in 0..10 {
        let mut rng = seed::stream(ctx.seed, "parameter-fd", s);
        let mut net = two_layer_model(&mut rng)?;
        let x = random_tensor(&[4, 3, 6, 6], 0.0, 1.0, &mut rng);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        let reference = RefNet::from_network(&net);
        net.zero_grad();
        let logits = net.forward(&x, NormRoute::Clean, Mode::Train)?;
        let (_, grad) = cross_entropy_with_grad(&logits, &labels, 1.0)?;
        net.backward(&grad)?;
        let analytic: Vec<Vec<f64>> = net.grads().into_iter().map(to_f64).collect();
        let xa = Act::from_tensor(&x);
        for (pi, grads) in analytic.iter().enumerate() {
            for (j, &a) in grads.iter().enumerate() {
                let eval = |delta: f64| {
                    let mut r = reference.clone();
                    r.params_mut()[pi][j] += delta;
                    r.loss(&xa, &labels, NormRoute::Clean, true)
                };
                let (lp, sp) = eval(FD_STEP);
                let (lm, sm) = eval(-FD_STEP);
                if sp != sm {
                    skipped += 1;
                    continue;
                }
                checked += 1;
                worst = worst.max(rel_err(a, (lp - lm) / (2.0 * FD_STEP), FD_FLOOR));
            }
        }
    }
    Ok(Outcome::new(
        worst < FD_TOLERANCE && checked >= 9 * (checked + skipped) / 10,
        "10 seeds, conv-BN-relu-pool-dense, batch 4, every parameter",
        format!("max rel err < {FD_TOLERANCE}"),
        format!("{} over {checked} coordinates ({skipped} kink crossings skipped)", fmt_f(worst)),
    ))
}

/// Smooth blob per channel with a zero one-pixel border.
fn smooth_image(size: usize, rng: &mut Rng) -> Tensor {
    let c = (size as f32 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(3 * size * size);
    for _ in 0..3 {
        let (cx, cy) = (c + rng.random_range(-3.0..3.0), c + rng.random_range(-3.0..3.0));
        let width = rng.random_range(120.0..200.0);
        let amp = rng.random_range(0.5..0.9);
        for y in 0..size {
            for x in 0..size {
                let border = x == 0 || y == 0 || x == size - 1 || y == size - 1;
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                data.push(if border { 0.0 } else { amp * (-(dx * dx + dy * dy) / width).exp() });
            }
        }
    }
    Tensor::new(vec![3, size, size], data).expect("image shape")
}

fn rotate_interior(ctx: &mut Context) -> Result<Outcome> {
    let size = 32;
    let centre = (size as f32 - 1.0) / 2.0;
    // rotation about the centre keeps a disc in frame; two bilinear lookups
    // reach at most two pixels further out
    let radius = size as f32 / 2.0 - 3.5;
    let mut rng = ctx.rng("rotate-interior");
    let mut worst: f32 = 0.0;
    for _ in 0..5 {
        let img = smooth_image(size, &mut rng);
        for s in 1..=10u8 {
            let there = AugOp::new(OpKind::Rotate, s, false)?;
            let back = AugOp::new(OpKind::Rotate, s, true)?;
            let out = apply_op(&apply_op(&img, &there)?, &back)?;
            for ch in 0..3 {
                for y in 0..size {
                    for x in 0..size {
                        let (dx, dy) = (x as f32 - centre, y as f32 - centre);
                        if (dx * dx + dy * dy).sqrt() <= radius {
                            let i = (ch * size + y) * size + x;
                            worst = worst.max((out.data()[i] - img.data()[i]).abs());
                        }
                    }
                }
            }
        }
    }
    Ok(Outcome::new(
        worst <= 2.0 / 255.0,
        "5 smooth 3×32×32 images with zero border, severities 1..=10",
        "max interior |Δ| <= 0.00784",
        format!("{worst:.5}"),
    ))
}

fn chain_length_frequency(ctx: &mut Context) -> Result<Outcome> {
    let s = ctx.sub_seed("chain-length", 0);
    let mut counts = [0usize; 3];
    for i in 0..10_000 {
        counts[sample_chain(s, i).len() - 1] += 1;
    }
    let worst = counts.iter().map(|&c| (c as f64 / 1e4 - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    Ok(Outcome::new(worst <= 0.03, "10^4 chains", "each length within ±0.03 of 1/3", format!("{counts:?}")))
}

fn chain_kind_frequency(ctx: &mut Context) -> Result<Outcome> {
    let s = ctx.sub_seed("chain-kind", 0);
    let mut counts = [0usize; 9];
    for i in 0..10_000 {
        let first = sample_chain(s, i).ops()[0].kind();
        counts[REGISTRY.iter().position(|&k| k == first).expect("registered kind")] += 1;
    }
    let worst = counts.iter().map(|&c| (c as f64 / 1e4 - 1.0 / 9.0).abs()).fold(0.0, f64::max);
    Ok(Outcome::new(worst <= 0.02, "first op of 10^4 chains", "each kind within ±0.02 of 1/9", format!("{counts:?}")))
}

fn chain_manual_composition(ctx: &mut Context) -> Result<Outcome> {
    let mut rng = ctx.rng("chain-composition");
    let s = ctx.sub_seed("chain-composition", 0);
    let mut mismatches = 0;
    for i in 0..50 {
        let x = random_tensor(&[3, 10, 12], 0.0, 1.0, &mut rng);
        let chain = sample_chain(s, i);
        let mut manual = x.clone();
        for op in chain.ops() {
            manual = op.operation(10, 12).apply(&manual);
        }
        if augmax::augops::apply_chain(&x, &chain)? != manual {
            mismatches += 1;
        }
    }
    Ok(Outcome::new(mismatches == 0, "50 random chains on random 3×10×12 images", "0 mismatches", mismatches.to_string()))
}

fn softmax_jacobian_fd(ctx: &mut Context) -> Result<Outcome> {
    let mut rng = ctx.rng("softmax-jacobian");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let b = rng.random_range(2..=6);
        let p: Vec<f32> = (0..b).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w: Vec<f64> = softmax_reparam(&p).iter().map(|&v| v as f64).collect();
        let pf: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        for j in 0..b {
            let mut e = vec![0.0; b];
            e[j] = 1.0;
            // the Jacobian is symmetric, so a vector-Jacobian product with eⱼ is column j
            let column = softmax_vjp(&w, &e);
            let mut up = pf.clone();
            up[j] += FD_STEP;
            let mut down = pf.clone();
            down[j] -= FD_STEP;
            let (su, sd) = (softmax(&up), softmax(&down));
            for i in 0..b {
                worst = worst.max((column[i] - (su[i] - sd[i]) / (2.0 * FD_STEP)).abs());
            }
        }
    }
    Ok(Outcome::new(worst <= 1e-4, "20 random p, b in 2..=6", "max |Δ| <= 1e-4", fmt_f(worst)))
}

fn mix_per_pixel(ctx: &mut Context) -> Result<Outcome> {
    let mut rng = ctx.rng("mix-per-pixel");
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let b = rng.random_range(1..=4);
        let x = random_tensor(&[3, 7, 5], 0.0, 1.0, &mut rng);
        let cs: Vec<Tensor> = (0..b).map(|_| random_tensor(&[3, 7, 5], 0.0, 1.0, &mut rng)).collect();
        let params = MixParams::new(rng.random(), (0..b).map(|_| rng.random_range(-2.0..2.0)).collect())?;
        let got = mix(&x, &cs, &params)?;
        let p: Vec<f64> = params.logits().iter().map(|&v| v as f64).collect();
        let want = ref_mix(&to_f64(&x), &cs.iter().map(to_f64).collect::<Vec<_>>(), params.m() as f64, &softmax(&p));
        worst = worst.max(Act::new(x.shape().to_vec(), want).max_abs_diff(&got));
    }
    Ok(Outcome::new(worst <= 1e-6, "30 random (x, chains, m, p), b in 1..=4", "max |Δ| <= 1e-6", fmt_f(worst)))
}

fn mix_backward_model_fd(ctx: &mut Context) -> Result<Outcome> {
    let seeds: Vec<u64> = (0..10).map(|i| ctx.sub_seed("mix-backward-fd", i)).collect();
    let r = mixing_gradient_trials(NormKind::Dubin, &seeds)?;
    Ok(Outcome::new(
        r.worst < FD_TOLERANCE,
        "10 seeds, small DuBIN model, eval mode, adversarial route",
        format!("max rel err < {FD_TOLERANCE}"),
        format!("{} ({} kinked draws redrawn)", fmt_f(r.worst), r.kinked_redraws),
    ))
}

fn augmix_beta_mean(ctx: &mut Context) -> Result<Outcome> {
    let x = Tensor::full(&[1, 2, 2], 0.5);
    let dist = MixingDistribution::default();
    let mut total = 0.0;
    for i in 0..10_000 {
        total += augmix_sample(&x, ctx.sub_seed("beta-mean", i), 3, &dist)?.params.m() as f64;
    }
    let mean = total / 1e4;
    Ok(Outcome::new((mean - 0.5).abs() <= 0.02, "10^4 AugMix draws", "0.5 ± 0.02", format!("{mean:.4}")))
}

fn test_sample(data: &Dataset, i: usize) -> (Tensor, usize) {
    let i = (i * 37) % data.len();
    (data.image(i), data.labels[i])
}

fn augmax_beats_random_median(ctx: &mut Context) -> Result<Outcome> {
    let model = ctx.fixtures.trained(TrainMode::Normal)?.model.clone();
    let test = ctx.fixtures.data()?.test.clone();
    let mut wins = 0;
    for t in 0..50 {
        let (x, label) = test_sample(&test, t);
        let trial = two_chain_trial(&model, &x, label, ctx.sub_seed("random-median", t as u64), 10, 100, false)?;
        if trial.percentile_rank_reached(0.5) {
            wins += 1;
        }
    }
    Ok(Outcome::new(
        wins >= 45,
        "50 test images, b = 2, n = k = 10, 100 uniform (m, w) draws each",
        ">= 45 of 50 trials at or above the median",
        format!("{wins} of 50"),
    ))
}

fn pgd_ball_and_ascent(ctx: &mut Context) -> Result<Outcome> {
    let model = ctx.fixtures.trained(TrainMode::Normal)?.model.clone();
    let test = ctx.fixtures.data()?.test.clone();
    let reference = RefNet::from_network(&model);
    let eps = 8.0 / 255.0;
    let (mut worst, mut ascended) = (0.0f32, 0);
    for t in 0..50 {
        let (x, label) = test_sample(&test, t);
        let x = x.reshape(&[1, 3, 32, 32])?;
        let adv = pgd_pixels(&x, &[label], &model, eps, 10, 2.0 / 255.0)?;
        worst = worst.max(adv.max_abs_diff(&x));
        let before = reference.loss(&Act::from_tensor(&x), &[label], NormRoute::Adversarial, false).0;
        let after = reference.loss(&Act::from_tensor(&adv), &[label], NormRoute::Adversarial, false).0;
        if after >= before {
            ascended += 1;
        }
    }
    Ok(Outcome::new(
        worst <= eps + 1e-7 && ascended >= 45,
        "50 test images, eps 8/255, 10 steps of 2/255",
        "max |Δ| <= eps + 1e-7 and loss increase in >= 45 of 50",
        format!("max |Δ| {worst:.6} (eps {eps:.6}); {ascended} of 50 increased"),
    ))
}

fn worst_of_k_max(ctx: &mut Context) -> Result<Outcome> {
    let model = small_model(NormKind::Dubin, ctx.sub_seed("worst-of-k-model", 0));
    let mut rng = ctx.rng("worst-of-k");
    let cfg = WorstOfKConfig::default();
    let b = cfg.chains;
    let mut bad = Vec::new();
    for t in 0..20 {
        let x = random_tensor(&[3, 8, 8], 0.0, 1.0, &mut rng);
        let label = rng.random_range(0..4);
        let s = ctx.sub_seed("worst-of-k", t);
        let got = worst_of_k_chains(&x, label, &model, &cfg, s)?;
        // candidates rebuilt from the documented seeding
        let base = sample_chains(s, b);
        let params = cfg.mixing.sample(b, &mut seed::stream(s, "mix", 0))?;
        let mut candidates = vec![base.clone()];
        for j in 1..cfg.candidates {
            candidates.push(base.iter().enumerate().map(|(i, c)| resample_severities(c, s, (j * b + i) as u64)).collect());
        }
        let mut evaluated = Vec::new();
        for chains in &candidates {
            let img = mix(&x, &chain_outputs(&x, chains)?, &params)?;
            let logits = model.infer(&img.reshape(&[1, 3, 8, 8])?, NormRoute::Adversarial)?;
            let row: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
            evaluated.push(cross_entropy_row(&row, label));
        }
        let best = evaluated.iter().copied().fold(f64::MIN, f64::max);
        let chosen = candidates.iter().position(|c| *c == got.chains);
        let chosen_loss = chosen.map(|i| evaluated[i]);
        let reported_max = got.losses.iter().copied().fold(f64::MIN, f64::max);
        if chosen_loss != Some(best) || got.losses[got.best] != reported_max || got.params != params {
            bad.push(t);
        }
    }
    Ok(Outcome::new(bad.is_empty(), "20 random images, k = 5, b = 3", "returned candidate has the maximal re-evaluated loss", format!("mismatching trials {bad:?}")))
}

fn worst_of_k_monotone(ctx: &mut Context) -> Result<Outcome> {
    let model = ctx.fixtures.trained(TrainMode::Normal)?.model.clone();
    let test = ctx.fixtures.data()?.test.clone();
    let (mut k1, mut k5) = (0.0, 0.0);
    for t in 0..200 {
        let (x, label) = test_sample(&test, t);
        let s = ctx.sub_seed("worst-of-k-monotone", t as u64);
        let run = |k: usize| -> Result<f64> {
            let cfg = WorstOfKConfig { candidates: k, ..Default::default() };
            let w = worst_of_k_chains(&x, label, &model, &cfg, s)?;
            Ok(w.losses[w.best])
        };
        k1 += run(1)?;
        k5 += run(5)?;
    }
    let (k1, k5) = (k1 / 200.0, k5 / 200.0);
    Ok(Outcome::new(k5 >= k1, "200 test images", "mean loss k=5 >= k=1", format!("k=1 {k1:.4}, k=5 {k5:.4}")))
}

fn adversary_loss_ordering(ctx: &mut Context) -> Result<Outcome> {
    let model = ctx.fixtures.trained(TrainMode::Normal)?.model.clone();
    let test = ctx.fixtures.data()?.test.clone();
    let cfg = WorstOfKConfig::default();
    let (mut aug, mut mixed, mut maxed) = (0.0, 0.0, 0.0);
    for t in 0..200 {
        let (x, label) = test_sample(&test, t);
        let s = ctx.sub_seed("loss-ordering", t as u64);
        let a = augmix_sample(&x, s, cfg.chains, &cfg.mixing)?.image;
        let m = advmix(&x, label, &model, &cfg, s)?;
        let attack = AttackConfig { seed: s, ..AttackConfig::default() };
        let r = advmax(&x, label, &model, &cfg, &attack)?;
        let l = losses(&model, &[a, m, r.x_star], label)?;
        aug += l[0];
        mixed += l[1];
        maxed += l[2];
    }
    let (aug, mixed, maxed) = (aug / 200.0, mixed / 200.0, maxed / 200.0);
    Ok(Outcome::new(
        maxed >= mixed && mixed >= aug,
        "200 test images, k = 5, n = 10, k_stop = 1",
        "advmax >= advmix >= augmix",
        format!("augmix {aug:.4}, advmix {mixed:.4}, advmax {maxed:.4}"),
    ))
}

fn random_norm(kind: NormKind, channels: usize, rng: &mut Rng) -> Result<NormLayer> {
    let mut layer = NormLayer::new(kind, channels)?;
    fill(&mut layer.gamma, 0.5, 1.5, rng);
    fill(&mut layer.beta, -0.5, 0.5, rng);
    for (_, stats) in layer.stat_sets_mut() {
        for v in &mut stats.mean {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in &mut stats.var {
            *v = rng.random_range(0.2..3.0);
        }
    }
    Ok(layer)
}

fn single_norm_ref(layer: &NormLayer, shape: &[usize]) -> crate::reference::NormParams {
    let net = Network::new(shape[1..].to_vec(), vec![("norm".into(), Layer::Norm(layer.clone()))]);
    match RefNet::from_network(&net).layers.remove(0) {
        RefLayer::Norm(p) => p,
        _ => unreachable!("single norm layer"),
    }
}

fn bn_eval_scalar_loop(ctx: &mut Context) -> Result<Outcome> {
    let mut rng = ctx.rng("bn-eval");
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        for kind in [NormKind::Bn, NormKind::Dubn] {
            let layer = random_norm(kind, 6, &mut rng)?;
            let x = random_tensor(&[3, 6, 4, 5], -2.0, 2.0, &mut rng);
            let p = single_norm_ref(&layer, x.shape());
            for route in [NormRoute::Clean, NormRoute::Adversarial] {
                let (y, _) = layer.forward_eval(&x, route)?;
                worst = worst.max(normalize(&Act::from_tensor(&x), &p, route, false).max_abs_diff(&y));
            }
        }
    }
    Ok(Outcome::new(worst <= 1e-6, "10 random BN and DuBN layers, both routes", "max |Δ| <= 1e-6", fmt_f(worst)))
}

fn in_scalar_loop(ctx: &mut Context) -> Result<Outcome> {
    let mut rng = ctx.rng("in-forward");
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut layer = random_norm(NormKind::In, 5, &mut rng)?;
        let x = random_tensor(&[3, 5, 4, 6], -3.0, 3.0, &mut rng);
        let p = single_norm_ref(&layer, x.shape());
        let want = normalize(&Act::from_tensor(&x), &p, NormRoute::Clean, true);
        let (y_train, _) = layer.forward(&x, NormRoute::Clean, true)?;
        let (y_eval, _) = layer.forward_eval(&x, NormRoute::Adversarial)?;
        worst = worst.max(want.max_abs_diff(&y_train)).max(want.max_abs_diff(&y_eval));
    }
    Ok(Outcome::new(worst <= 1e-6, "10 random IN layers, train and eval", "max |Δ| <= 1e-6", fmt_f(worst)))
}

/// Channels `range` of an `[N, C, H, W]` tensor.
fn channels(x: &Tensor, range: std::ops::Range<usize>) -> Tensor {
    let &[n, c, h, w] = x.shape() else { panic!("4-d tensor expected") };
    let hw = h * w;
    let mut data = Vec::with_capacity(n * range.len() * hw);
    for s in 0..n {
        for ch in range.clone() {
            data.extend_from_slice(&x.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw]);
        }
    }
    Tensor::new(vec![n, range.len(), h, w], data).expect("slice shape")
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let &[n, ca, h, w] = a.shape() else { panic!("4-d tensor expected") };
    let cb = b.shape()[1];
    let hw = h * w;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..n {
        data.extend_from_slice(&a.data()[s * ca * hw..(s + 1) * ca * hw]);
        data.extend_from_slice(&b.data()[s * cb * hw..(s + 1) * cb * hw]);
    }
    Tensor::new(vec![n, ca + cb, h, w], data).expect("concat shape")
}

fn dubin_half_composition(ctx: &mut Context) -> Result<Outcome> {
    let mut rng = ctx.rng("dubin-composition");
    let mut mismatches = Vec::new();
    for t in 0..10 {
        let c = 2 * rng.random_range(1..=4);
        let half = c / 2;
        let dubin = random_norm(NormKind::Dubin, c, &mut rng)?;
        let mut inorm = NormLayer::new(NormKind::In, half)?;
        let mut dubn = NormLayer::new(NormKind::Dubn, half)?;
        inorm.gamma = Tensor::new(vec![half], dubin.gamma.data()[..half].to_vec())?;
        inorm.beta = Tensor::new(vec![half], dubin.beta.data()[..half].to_vec())?;
        dubn.gamma = Tensor::new(vec![half], dubin.gamma.data()[half..].to_vec())?;
        dubn.beta = Tensor::new(vec![half], dubin.beta.data()[half..].to_vec())?;
        for route in [NormRoute::Clean, NormRoute::Adversarial] {
            *dubn.running_mut(route).expect("dual") = dubin.running(route).expect("dual").clone();
        }
        let x = random_tensor(&[4, c, 3, 5], -2.0, 2.0, &mut rng);
        let (xa, xb) = (channels(&x, 0..half), channels(&x, half..c));
        for route in [NormRoute::Clean, NormRoute::Adversarial] {
            for training in [false, true] {
                let (mut whole, mut a, mut b) = (dubin.clone(), inorm.clone(), dubn.clone());
                let y = whole.forward(&x, route, training)?.0;
                let manual = concat_channels(&a.forward(&xa, route, training)?.0, &b.forward(&xb, route, training)?.0);
                let stats_agree = [NormRoute::Clean, NormRoute::Adversarial]
                    .iter()
                    .all(|&r| whole.running(r) == b.running(r));
                if y != manual || !stats_agree {
                    mismatches.push((t, route, training));
                }
            }
        }
    }
    Ok(Outcome::new(
        mismatches.is_empty(),
        "10 random DuBIN layers, both routes, train and eval",
        "bitwise equal outputs and running statistics",
        format!("mismatches {mismatches:?}"),
    ))
}

fn stats_report_channel_mean(ctx: &mut Context) -> Result<Outcome> {
    let mut bad = Vec::new();
    for kind in [NormKind::Dubn, NormKind::Dubin] {
        let model = small_model(kind, ctx.sub_seed("stats-report", kind as u64));
        let report = norm_stats(&model);
        let mut expected = Vec::new();
        for (name, layer) in model.norm_layers() {
            let mean = |route| {
                let v = &layer.running(route).expect("dual layer").var;
                let mut s = 0.0f64;
                for &x in v {
                    s += x as f64;
                }
                s / v.len() as f64
            };
            expected.push((name.to_string(), mean(NormRoute::Clean), mean(NormRoute::Adversarial)));
        }
        let got: Vec<_> = report.iter().map(|r| (r.layer.clone(), r.clean_var, r.adv_var)).collect();
        if got != expected {
            bad.push(format!("{kind:?}: got {got:?} expected {expected:?}"));
        }
    }
    Ok(Outcome::new(bad.is_empty(), "random DuBN and DuBIN small models", "equal to channel means", bad.join("; ")))
}

fn parameter_count(_: &mut Context) -> Result<Outcome> {
    // conv weights 3·3·cin·cout (no bias), two affine vectors per norm, dense W and b
    let formula = |c: usize, [w1, w2, w3]: [usize; 3], k: usize| {
        9 * (c * w1 + w1 * w2 + w2 * w3) + 2 * (w1 + w2 + w3) + w3 * k + k
    };
    let mut bad = Vec::new();
    let configs = [
        (3, [32, 64, 64], 10),
        (1, [4, 6, 8], 3),
        (3, [8, 8, 8], 15),
    ];
    for (c, widths, classes) in configs {
        for norm in [NormKind::Bn, NormKind::In, NormKind::Dubn, NormKind::Dubin] {
            let net = build(&ModelConfig {
                input_shape: [c, 16, 16],
                classes,
                norm,
                widths,
                seed: 1,
            })?;
            if net.param_count() != formula(c, widths, classes) {
                bad.push(format!("{c}/{widths:?}/{classes}/{norm:?}: {}", net.param_count()));
            }
        }
    }
    let default = build(&ModelConfig::default())?.param_count();
    if default != 57_130 {
        bad.push(format!("default: {default}"));
    }
    Ok(Outcome::new(bad.is_empty(), "3 width sets × 4 norm kinds, plus the default", "formula; 57130 for the default", format!("mismatches {bad:?}")))
}

fn input_grad_pixel_fd(ctx: &mut Context) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut kinks = 0;
    for s in 0..5 {
        let model = small_model(NormKind::Dubin, ctx.sub_seed("pixel-fd-model", s));
        let mut rng = seed::stream(ctx.seed, "pixel-fd", s);
        let x = random_tensor(&[2, 3, 8, 8], 0.0, 1.0, &mut rng);
        let labels = vec![rng.random_range(0..4), rng.random_range(0..4)];
        let (_, dx) = loss_and_input_grad(&model, &x, &labels, NormRoute::Adversarial)?;
        let reference = RefNet::from_network(&model);
        let base = Act::from_tensor(&x);
        let mut done = 0;
        while done < 20 {
            let j = rng.random_range(0..x.len());
            let eval = |delta: f64| {
                let mut a = base.clone();
                a.data[j] += delta;
                reference.loss(&a, &labels, NormRoute::Adversarial, false)
            };
            let (lp, sp) = eval(FD_STEP);
            let (lm, sm) = eval(-FD_STEP);
            if sp != sm {
                kinks += 1;
                continue;
            }
            worst = worst.max(rel_err(dx.data()[j] as f64, (lp - lm) / (2.0 * FD_STEP), FD_FLOOR));
            done += 1;
        }
    }
    Ok(Outcome::new(
        worst < FD_TOLERANCE,
        "5 small DuBIN models, 20 random pixels each",
        format!("max rel err < {FD_TOLERANCE}"),
        format!("{} ({kinks} kinked pixels redrawn)", fmt_f(worst)),
    ))
}

fn penultimate_truncated(ctx: &mut Context) -> Result<Outcome> {
    let model = small_model(NormKind::Dubin, ctx.sub_seed("penultimate", 0));
    let mut rng = ctx.rng("penultimate");
    let x = random_tensor(&[3, 3, 8, 8], 0.0, 1.0, &mut rng);
    let mut ok = true;
    for route in [NormRoute::Clean, NormRoute::Adversarial] {
        let features = penultimate_features(&model, &x, route)?;
        let mut h = x.clone();
        for (_, layer) in model.layers() {
            if matches!(layer, Layer::Dense(_)) {
                break;
            }
            h = layer.forward_eval(&h, route)?.0;
        }
        ok &= features == h && features.shape() == [3, 6];
    }
    Ok(Outcome::new(ok, "small DuBIN model, 3 images, both routes", "bitwise equal, width 6", ok.to_string()))
}

fn random_distribution(c: usize, rng: &mut Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..c)
        .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random::<f64>().powi(3) })
        .collect();
    let total: f64 = v.iter().sum();
    if total == 0.0 {
        return vec![1.0 / c as f64; c];
    }
    v.into_iter().map(|x| x / total).collect()
}

fn js_high_precision(ctx: &mut Context) -> Result<Outcome> {
    let mut rng = ctx.rng("js-oracle");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = rng.random_range(2..=10);
        let (a, b, d) = (random_distribution(c, &mut rng), random_distribution(c, &mut rng), random_distribution(c, &mut rng));
        worst = worst.max((js_divergence(&a, &b, &d)? - js3(&a, &b, &d)).abs());
    }
    Ok(Outcome::new(worst <= 1e-6, "100 random triples, 2..=10 classes, some zeros", "max |Δ| <= 1e-6", fmt_f(worst)))
}

fn toy_batch(seed_value: u64, n: usize) -> Result<Dataset> {
    let mut rng = seed::stream(seed_value, "toy-batch", 0);
    let images = random_tensor(&[n, 3, 8, 8], 0.0, 1.0, &mut rng);
    let labels = (0..n).map(|i| i % 4).collect();
    Dataset::new(images, labels, 4)
}

fn oracle_total(logits: &[Tensor], labels: &[usize], lambda: f64) -> f64 {
    let acts: Vec<Act> = logits.iter().map(Act::from_tensor).collect();
    if acts.len() == 1 {
        return mean_cross_entropy(&acts[0], labels);
    }
    let n = labels.len();
    let c = acts[0].data.len() / n;
    let row = |a: &Act, i: usize| softmax(&a.data[i * c..(i + 1) * c]);
    let js = (0..n).map(|i| js3(&row(&acts[0], i), &row(&acts[1], i), &row(&acts[2], i))).sum::<f64>() / n as f64;
    0.5 * (mean_cross_entropy(&acts[0], labels) + mean_cross_entropy(&acts[2], labels)) + lambda * js
}

fn train_step_recomputed(ctx: &mut Context) -> Result<Outcome> {
    let data = toy_batch(ctx.sub_seed("train-step", 0), 6)?;
    let mut worst: f64 = 0.0;
    for (i, mode) in TrainMode::ALL.into_iter().enumerate() {
        for lambda in [0.0f32, 1.0, 10.0] {
            let mut model = small_model(NormKind::Dubin, ctx.sub_seed("train-step-model", i as u64));
            let cfg = TrainConfig {
                mode,
                lambda,
                seed: ctx.sub_seed("train-step-seed", i as u64),
                ..TrainConfig::default()
            };
            let mut opt = Sgd::new(OptimizerConfig::default())?;
            for step in 0..2 {
                let indices: Vec<usize> = (0..data.len()).collect();
                let batch = Batch::gather(&data, &indices, cfg.seed, step, 0);
                let r = train_step(&mut model, &mut opt, &batch, &cfg, step, 2)?;
                let want = oracle_total(&r.logits, &batch.labels, lambda as f64);
                worst = worst.max((r.losses.total - want).abs());
            }
        }
    }
    Ok(Outcome::new(worst <= 1e-5, "every mode × λ in {0, 1, 10}, two steps each", "max |Δ| <= 1e-5", fmt_f(worst)))
}

fn normal_train_calibration(ctx: &mut Context) -> Result<Outcome> {
    let trained = ctx.fixtures.trained(TrainMode::Normal)?;
    Ok(Outcome::new(
        trained.train_accuracy >= 95.0,
        "10-class 32×32 toyset, 100 per class, normal mode, 30 epochs",
        "train accuracy >= 95%",
        format!("{:.2}%", trained.train_accuracy),
    ))
}

fn gaussian_noise_std(ctx: &mut Context) -> Result<Outcome> {
    let x = Tensor::full(&[4, 125, 200], 0.5);
    let mut worst: f64 = 0.0;
    let mut measured = Vec::new();
    for s in 1..=5u8 {
        let y = corrupt(&x, CorruptionKind::GaussianNoise, s, ctx.sub_seed("gaussian-std", s as u64))?;
        let d: Vec<f64> = y.data().iter().map(|&v| v as f64 - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d.len() as f64).sqrt();
        let nominal = 0.04 * s as f64;
        worst = worst.max((std / nominal - 1.0).abs());
        measured.push(format!("{std:.4}"));
    }
    Ok(Outcome::new(worst <= 0.05, "10^5 pixels at 0.5, severities 1..=5", "std within ±5% of 0.04·s", measured.join(", ")))
}

fn ra_from_cells(ctx: &mut Context) -> Result<Outcome> {
    let model = small_model(NormKind::Bn, ctx.sub_seed("ra-model", 0));
    let test = toy_batch(ctx.sub_seed("ra-data", 0), 24)?;
    let suite = CorruptionSuite::new(&SuiteConfig {
        seed: ctx.sub_seed("ra-suite", 0),
        ..Default::default()
    })?;
    let report = evaluate(&model, &test, &suite)?;
    // what an external script reading cells.csv would do
    let mut kinds: Vec<(String, Vec<f64>)> = Vec::new();
    for line in report.cells_csv().lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let acc: f64 = fields[2].parse().expect("accuracy column");
        match kinds.iter_mut().find(|(k, _)| k == fields[0]) {
            Some((_, v)) => v.push(acc),
            None => kinds.push((fields[0].to_string(), vec![acc])),
        }
    }
    let mut total = 0.0;
    for (_, v) in &kinds {
        total += v.iter().sum::<f64>() / v.len() as f64;
    }
    let ra = total / kinds.len() as f64;
    Ok(Outcome::new(ra == report.ra, "small model, 24 images, full suite", format!("{ra}"), format!("{}", report.ra)))
}

fn random_report(rng: &mut Rng) -> Result<RobustnessReport> {
    let mut cells = Vec::new();
    for kind in CorruptionKind::ALL {
        for severity in 1..=5 {
            cells.push(Cell {
                kind,
                severity,
                accuracy: rng.random_range(0.0..95.0),
            });
        }
    }
    RobustnessReport::from_cells(rng.random_range(50.0..100.0), cells)
}

fn mce_spreadsheet(ctx: &mut Context) -> Result<Outcome> {
    let mut rng = ctx.rng("mce-spreadsheet");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (t, b) = (random_report(&mut rng)?, random_report(&mut rng)?);
        let mut ratios = 0.0;
        for kind in CorruptionKind::ALL {
            let err = |r: &RobustnessReport| -> f64 {
                r.cells.iter().filter(|c| c.kind == kind).map(|c| 100.0 - c.accuracy).sum()
            };
            ratios += err(&t) / err(&b);
        }
        let want = 100.0 * ratios / CorruptionKind::ALL.len() as f64;
        worst = worst.max((mce(&t, &b)? - want).abs());
    }
    Ok(Outcome::new(worst <= 1e-6, "20 random report pairs, 9 kinds × 5 severities", "max |Δ| <= 1e-6", fmt_f(worst)))
}

fn toyset_calibration_sa(ctx: &mut Context) -> Result<Outcome> {
    let trained = ctx.fixtures.trained(TrainMode::Normal)?;
    Ok(Outcome::new(
        trained.test_accuracy >= 90.0,
        "normal SmallCNN on the 10-class toyset, 1000 test images",
        "test SA >= 90%",
        format!("{:.2}%", trained.test_accuracy),
    ))
}

/// RA of the normal and AugMix fixtures on 50 test images per class.
pub fn fixture_robustness(ctx: &mut Context) -> Result<(RobustnessReport, RobustnessReport)> {
    let test = ctx.fixtures.data()?.test.take_per_class(50);
    let suite = CorruptionSuite::new(&SuiteConfig {
        seed: ctx.sub_seed("fixture-suite", 0),
        ..Default::default()
    })?;
    let normal = evaluate(&ctx.fixtures.trained(TrainMode::Normal)?.model, &test, &suite)?;
    let augmix = evaluate(&ctx.fixtures.trained(TrainMode::Augmix)?.model, &test, &suite)?;
    Ok((normal, augmix))
}

fn augmix_ra_over_normal(ctx: &mut Context) -> Result<Outcome> {
    let (normal, augmix) = fixture_robustness(ctx)?;
    Ok(Outcome::new(
        augmix.ra > normal.ra,
        "normal and augmix fixtures, 500 test images, full suite",
        format!("RA(augmix) > RA(normal) = {:.2}", normal.ra),
        format!("RA(augmix) = {:.2} (SA {:.2} vs {:.2})", augmix.ra, augmix.sa, normal.sa),
    ))
}

fn finite_difference_family(ctx: &mut Context) -> Result<Outcome> {
    let own = "proptests.run-suite.finite-difference-family";
    let mut failed = Vec::new();
    let mut count = 0;
    for case in oracles().iter().filter(|c| c.kind == OracleKind::FiniteDifference && c.id != own) {
        count += 1;
        let record = crate::run_case(case, ctx);
        if !record.passed {
            failed.push(record.id);
        }
    }
    Ok(Outcome::new(failed.is_empty(), format!("{count} finite-difference cases"), "all pass", format!("failed {failed:?}")))
}

fn two_chain_grid_oracle(ctx: &mut Context) -> Result<Outcome> {
    let model = ctx.fixtures.trained(TrainMode::Normal)?.model.clone();
    let test = ctx.fixtures.data()?.test.clone();
    let mut bad = Vec::new();
    let mut ratio = 0.0;
    let trials = 8;
    for t in 0..trials {
        let (x, label) = test_sample(&test, 1000 + t);
        let trial = two_chain_trial(&model, &x, label, ctx.sub_seed("grid-oracle", t as u64), 10, 100, true)?;
        let (grid, gap) = (trial.grid_max.expect("grid"), trial.grid_gap.expect("grid"));
        let best_seen = trial.random.iter().copied().fold(trial.attack_loss, f64::max);
        if grid + gap < best_seen {
            bad.push(t);
        }
        ratio += trial.attack_loss / grid;
    }
    Ok(Outcome::new(
        bad.is_empty(),
        format!("{trials} test images, 51×51 (m, w₁) grid"),
        "grid max + neighbor gap bounds every sampled and attacked loss",
        format!("violations {bad:?}; mean attack/grid ratio {:.3}", ratio / trials as f64),
    ))
}

fn noise_monotone(ctx: &mut Context) -> Result<Outcome> {
    let test = ctx.fixtures.data()?.test.clone();
    let model = ctx.fixtures.trained(TrainMode::Normal)?.model.clone();
    let kinds: Vec<CorruptionKind> = CorruptionKind::ALL.into_iter().filter(|k| k.is_noise()).collect();
    let suite = CorruptionSuite::new(&SuiteConfig {
        kinds,
        seed: ctx.sub_seed("noise-monotone", 0),
        ..Default::default()
    })?;
    let report = evaluate(&model, &test, &suite)?;
    let mut bad = Vec::new();
    for pair in report.cells.windows(2) {
        if pair[0].kind == pair[1].kind && pair[1].accuracy > pair[0].accuracy + 2.0 {
            bad.push(format!("{} s{}→s{}", pair[0].kind.name(), pair[0].severity, pair[1].severity));
        }
    }
    Ok(Outcome::new(bad.is_empty(), format!("{} test images, noise kinds", test.len()), "non-increasing in severity", format!("violations {bad:?}")))
}

fn training_accounting(ctx: &mut Context) -> Result<Outcome> {
    let data = toy_batch(ctx.sub_seed("accounting-data", 0), 16)?;
    let mut problems = Vec::new();
    for (i, mode) in [TrainMode::Augmix, TrainMode::Augmax, TrainMode::Advmax].into_iter().enumerate() {
        let mut model = small_model(NormKind::Dubin, ctx.sub_seed("accounting-model", i as u64));
        let cfg = TrainConfig {
            mode,
            epochs: 2,
            batch_size: 8,
            seed: ctx.sub_seed("accounting-train", i as u64),
            ..TrainConfig::default()
        };
        let mut logs = Vec::new();
        fit_with(&mut model, &data, None, &cfg, None, |log| logs.push(log.clone()))?;
        for log in &logs {
            if log.clean_forwards != 16 || log.adversarial_forwards != 32 {
                problems.push(format!("{mode:?} epoch {} forwards {}/{}", log.epoch, log.clean_forwards, log.adversarial_forwards));
            }
            if !(0.0..=3f64.ln()).contains(&log.js) {
                problems.push(format!("{mode:?} epoch {} js {}", log.epoch, log.js));
            }
            let identity = 0.5 * (log.ce_clean + log.ce_adv) + cfg.lambda as f64 * log.js;
            if (identity - log.total).abs() > 1e-5 {
                problems.push(format!("{mode:?} epoch {} total {} vs {identity}", log.epoch, log.total));
            }
        }
    }
    Ok(Outcome::new(problems.is_empty(), "augmix/augmax/advmax, 16 samples, 2 epochs", "forwards N and 2N; JS in [0, ln 3]; total identity", format!("{problems:?}")))
}

fn attack_constraints(ctx: &mut Context) -> Result<Outcome> {
    let (iterations, violations) = constraint_sweep(ctx.sub_seed("constraints", 0), 2_000)?;
    Ok(Outcome::new(violations.is_empty(), format!("{iterations} adversary iterations"), "no violations", format!("{violations:?}")))
}

/// Randomized attacks on small models until at least `min_iterations`
/// parameter updates were observed; returns the count and any violations of
/// `m ∈ [0, 1]` or `|Σ softmax(p) − 1| <= 1e-6`.
pub fn constraint_sweep(seed_value: u64, min_iterations: usize) -> Result<(usize, Vec<String>)> {
    let mut iterations = 0;
    let mut violations = Vec::new();
    let mut round = 0u64;
    while iterations < min_iterations {
        let mut rng = seed::stream(seed_value, "constraint-round", round);
        let kind = [NormKind::Bn, NormKind::Dubn, NormKind::Dubin][rng.random_range(0..3)];
        let model = small_model(kind, seed::derive_seed(seed_value, "constraint-model", round));
        let n = rng.random_range(1..=10);
        let cfg = AttackConfig {
            n,
            k: rng.random_range(1..=n),
            alpha: [0.05, 0.1, 0.3, 1.0][rng.random_range(0..4)],
            seed: 0,
        };
        let b = rng.random_range(1..=4);
        let xs: Vec<Tensor> = (0..8).map(|_| random_tensor(&[3, 8, 8], 0.0, 1.0, &mut rng)).collect();
        let outputs: Vec<Vec<Tensor>> = (0..8)
            .map(|_| (0..b).map(|_| random_tensor(&[3, 8, 8], 0.0, 1.0, &mut rng)).collect())
            .collect();
        let targets: Vec<AttackTarget> = (0..8)
            .map(|i| AttackTarget {
                x: &xs[i],
                label: rng.random_range(0..4),
                outputs: &outputs[i],
                seed: seed::derive_seed(seed_value, "constraint-init", round * 8 + i as u64),
            })
            .collect();
        generate_augmax_observed(&targets, &model, &cfg, |target, step, params| {
            iterations += 1;
            let m = params.m();
            let p: Vec<f64> = params.logits().iter().map(|&v| v as f64).collect();
            let reference_sum: f64 = softmax(&p).iter().sum();
            let library_sum: f64 = params.weights().iter().map(|&v| v as f64).sum();
            if !(0.0..=1.0).contains(&m) || (reference_sum - 1.0).abs() > 1e-6 || (library_sum - 1.0).abs() > 1e-6 {
                violations.push(format!("round {round} target {target} step {step}: m={m} Σw={library_sum}"));
            }
        })?;
        round += 1;
    }
    Ok((iterations, violations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_unique_and_stable_shaped() {
        let cases = all();
        let mut ids: Vec<&str> = cases.iter().map(|c| c.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), cases.len());
        assert!(cases.iter().all(|c| c.id.split('.').count() == 3));
    }

    #[test]
    fn one_case_per_documented_oracle() {
        assert_eq!(oracles().len(), 33);
    }
}

//! Check routines shared by the oracle cases and the acceptance harness.

use augmax::adversary::{generate_augmax, AttackConfig, ATTACK_ROUTE};
use augmax::augops::{sample_chains, AugChain};
use augmax::diffcore::loss::{argmax, per_sample_cross_entropy};
use augmax::diffcore::Network;
use augmax::mixer::{chain_outputs, mix, mix_backward, uniform_params, MixParams};
use augmax::model::{build, loss_and_input_grad, ModelConfig};
use augmax::seed::{self, Rng};
use augmax::{NormKind, NormRoute, Result, Tensor};
use rand::Rng as _;

use crate::reference::{mix as ref_mix, quantile, rel_err, softmax, to_f64, Act, RefNet};

/// Central-difference step used by every finite-difference check.
pub const FD_STEP: f64 = 1e-3;

/// Relative-error threshold of every finite-difference check.
pub const FD_TOLERANCE: f64 = 1e-3;

/// Absolute floor of the relative-error denominator.
pub const FD_FLOOR: f64 = 1e-4;

pub fn random_tensor(shape: &[usize], lo: f32, hi: f32, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// A small SmallCNN (`3×8×8` input, 4 classes) with randomized affine
/// parameters and running statistics so eval-mode normalization is not the
/// identity.
pub fn small_model(norm: NormKind, seed: u64) -> Network {
    let mut net = build(&ModelConfig {
        input_shape: [3, 8, 8],
        classes: 4,
        norm,
        widths: [4, 6, 6],
        seed,
    })
    .expect("valid small config");
    let mut rng = seed::stream(seed, "small-model-stats", 0);
    for (_, layer) in net.norm_layers_mut() {
        for v in layer.gamma.data_mut() {
            *v = rng.random_range(0.5..1.5);
        }
        for v in layer.beta.data_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
        for (_, stats) in layer.stat_sets_mut() {
            for v in &mut stats.mean {
                *v = rng.random_range(-0.3..0.3);
            }
            for v in &mut stats.var {
                *v = rng.random_range(0.3..1.5);
            }
        }
    }
    net
}

/// One analytic-vs-numeric comparison of `(∂L/∂m, ∂L/∂p)`.
#[derive(Debug, Clone)]
pub struct MixGradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel: f64,
    /// A central difference crossed a ReLU kink; the instance is unusable.
    pub kinked: bool,
}

/// Compares the library's mixing gradients, pushed through the model in eval
/// mode on `route`, with central differences of the reference network's loss.
pub fn mixing_gradient_check(
    model: &Network,
    x: &Tensor,
    outputs: &[Tensor],
    params: &MixParams,
    label: usize,
    route: NormRoute,
) -> Result<MixGradCheck> {
    let g = mix(x, outputs, params)?;
    let shape = x.shape().to_vec();
    let batched: Vec<usize> = std::iter::once(1).chain(shape.iter().copied()).collect();
    let (_, dx) = loss_and_input_grad(model, &g.clone().reshape(&batched)?, &[label], route)?;
    let (dm, dp) = mix_backward(x, outputs, params, &dx.reshape(&shape)?)?;
    let mut analytic = vec![dm];
    analytic.extend(dp);

    let reference = RefNet::from_network(model);
    let xf = to_f64(x);
    let cf: Vec<Vec<f64>> = outputs.iter().map(to_f64).collect();
    let loss = |m: f64, p: &[f64]| {
        let img = ref_mix(&xf, &cf, m, &softmax(p));
        reference.loss(&Act::new(batched.clone(), img), &[label], route, false)
    };
    let m0 = params.m() as f64;
    let p0: Vec<f64> = params.logits().iter().map(|&v| v as f64).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut kinked = false;
    let (lp, sp) = loss(m0 + FD_STEP, &p0);
    let (lm, sm) = loss(m0 - FD_STEP, &p0);
    kinked |= sp != sm;
    numeric.push((lp - lm) / (2.0 * FD_STEP));
    for i in 0..p0.len() {
        let mut up = p0.clone();
        up[i] += FD_STEP;
        let mut down = p0.clone();
        down[i] -= FD_STEP;
        let (lp, sp) = loss(m0, &up);
        let (lm, sm) = loss(m0, &down);
        kinked |= sp != sm;
        numeric.push((lp - lm) / (2.0 * FD_STEP));
    }
    let max_rel = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_err(a, n, FD_FLOOR))
        .fold(0.0, f64::max);
    Ok(MixGradCheck {
        analytic,
        numeric,
        max_rel,
        kinked,
    })
}

/// Summary of [`mixing_gradient_trials`].
#[derive(Debug, Clone)]
pub struct GradTrials {
    pub checks: usize,
    pub kinked_redraws: usize,
    pub worst: f64,
}

/// Random mixing-gradient instances on a fresh small model per seed, with `m`
/// kept away from the clip boundaries. Kinked instances are redrawn.
pub fn mixing_gradient_trials(norm: NormKind, seeds: &[u64]) -> Result<GradTrials> {
    let mut out = GradTrials {
        checks: 0,
        kinked_redraws: 0,
        worst: 0.0,
    };
    for &s in seeds {
        let model = small_model(norm, s);
        let mut rng = seed::stream(s, "mix-grad", 0);
        loop {
            let x = random_tensor(&[3, 8, 8], 0.0, 1.0, &mut rng);
            let b = rng.random_range(2..=4);
            let outputs: Vec<Tensor> = (0..b).map(|_| random_tensor(&[3, 8, 8], 0.0, 1.0, &mut rng)).collect();
            let m = rng.random_range(0.05..0.95);
            let p = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
            let params = MixParams::new(m, p)?;
            let label = rng.random_range(0..4);
            let check = mixing_gradient_check(&model, &x, &outputs, &params, label, NormRoute::Adversarial)?;
            if check.kinked {
                out.kinked_redraws += 1;
                continue;
            }
            out.checks += 1;
            out.worst = out.worst.max(check.max_rel);
            break;
        }
    }
    Ok(out)
}

/// Losses of `images` (one sample each) under eval mode on the attack route.
pub fn losses(model: &Network, images: &[Tensor], label: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(256) {
        let logits = model.infer(&Tensor::stack(chunk)?, ATTACK_ROUTE)?;
        out.extend(per_sample_cross_entropy(&logits, &vec![label; chunk.len()])?);
    }
    Ok(out)
}

/// Two-chain landscape probe: the mixing attack against random and exhaustive
/// `(m, w₁)` search on the same chains.
#[derive(Debug, Clone)]
pub struct TwoChainTrial {
    pub attack_loss: f64,
    pub random: Vec<f64>,
    /// Maximum over the `(m, w₁)` grid, when computed.
    pub grid_max: Option<f64>,
    /// Largest loss change between neighboring grid points.
    pub grid_gap: Option<f64>,
}

impl TwoChainTrial {
    pub fn percentile_rank_reached(&self, q: f64) -> bool {
        self.attack_loss >= quantile(&self.random, q)
    }
}

/// Grid step of the exhaustive two-chain oracle.
pub const GRID_STEP: f64 = 0.02;

fn two_chain_image(x: &Tensor, outputs: &[Tensor], m: f64, w1: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(outputs[0].data())
        .zip(outputs[1].data())
        .map(|((&xv, &a), &b)| (m * xv as f64 + (1.0 - m) * (w1 * a as f64 + (1.0 - w1) * b as f64)) as f32)
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("image shape")
}

/// Loss at every point of the `(m, w₁)` grid, row-major in `m`.
pub fn grid_losses(model: &Network, x: &Tensor, outputs: &[Tensor], label: usize) -> Result<(usize, Vec<f64>)> {
    let steps = (1.0 / GRID_STEP).round() as usize + 1;
    let mut images = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        for j in 0..steps {
            images.push(two_chain_image(x, outputs, i as f64 * GRID_STEP, j as f64 * GRID_STEP));
        }
    }
    Ok((steps, losses(model, &images, label)?))
}

/// Largest loss difference between horizontally or vertically adjacent grid points.
pub fn grid_gap(steps: usize, grid: &[f64]) -> f64 {
    let mut gap: f64 = 0.0;
    for i in 0..steps {
        for j in 0..steps {
            let v = grid[i * steps + j];
            if i + 1 < steps {
                gap = gap.max((grid[(i + 1) * steps + j] - v).abs());
            }
            if j + 1 < steps {
                gap = gap.max((grid[i * steps + j + 1] - v).abs());
            }
        }
    }
    gap
}

/// One trial on test image `x`: two chains from `seed`, the mixing attack with
/// `k = n` (no early stop), `draws` uniform `(m, w₁)` draws, and optionally
/// the exhaustive grid.
pub fn two_chain_trial(
    model: &Network,
    x: &Tensor,
    label: usize,
    seed: u64,
    n: usize,
    draws: usize,
    with_grid: bool,
) -> Result<TwoChainTrial> {
    let chains: Vec<AugChain> = sample_chains(seed, 2);
    let outputs = chain_outputs(x, &chains)?;
    let cfg = AttackConfig {
        n,
        k: n,
        seed: seed::derive_seed(seed, "attack", 0),
        ..AttackConfig::default()
    };
    let result = generate_augmax(x, label, model, &chains, &cfg)?;
    let attack_loss = *result.loss_trace.last().expect("at least one step");
    let mut rng = seed::stream(seed, "random-mixing", 0);
    let images: Vec<Tensor> = (0..draws)
        .map(|_| {
            let m = rng.random::<f64>();
            let w1 = rng.random::<f64>();
            two_chain_image(x, &outputs, m, w1)
        })
        .collect();
    let random = losses(model, &images, label)?;
    let (grid_max, grid_gap_v) = if with_grid {
        let (steps, grid) = grid_losses(model, x, &outputs, label)?;
        (Some(grid.iter().copied().fold(f64::MIN, f64::max)), Some(grid_gap(steps, &grid)))
    } else {
        (None, None)
    };
    Ok(TwoChainTrial {
        attack_loss,
        random,
        grid_max,
        grid_gap: grid_gap_v,
    })
}

/// The mixing-parameter attack re-implemented as a plain single-sample loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrace {
    pub steps: usize,
    pub misclassified: usize,
    pub losses: Vec<f64>,
    pub params: MixParams,
}

pub fn reference_attack(
    model: &Network,
    x: &Tensor,
    label: usize,
    outputs: &[Tensor],
    cfg: &AttackConfig,
) -> Result<ReferenceTrace> {
    let mut params = uniform_params(outputs.len(), &mut seed::stream(cfg.seed, "augmax-init", 0));
    let shape = x.shape().to_vec();
    let batched: Vec<usize> = std::iter::once(1).chain(shape.iter().copied()).collect();
    let sign = |v: f64| -> f32 {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let mut trace = ReferenceTrace {
        steps: 0,
        misclassified: 0,
        losses: Vec::new(),
        params: params.clone(),
    };
    for step in 1..=cfg.n {
        let g = mix(x, outputs, &params)?.reshape(&batched)?;
        let (_, dx) = loss_and_input_grad(model, &g, &[label], ATTACK_ROUTE)?;
        let (dm, dp) = mix_backward(x, outputs, &params, &dx.reshape(&shape)?)?;
        let m = (params.m() + cfg.alpha * sign(dm)).clamp(0.0, 1.0);
        let p: Vec<f32> = params
            .logits()
            .iter()
            .zip(&dp)
            .map(|(&p, &d)| p + cfg.alpha * sign(d))
            .collect();
        params = MixParams::new(m, p)?;
        let logits = model.infer(&mix(x, outputs, &params)?.reshape(&batched)?, ATTACK_ROUTE)?;
        trace.steps = step;
        trace.losses.push(per_sample_cross_entropy(&logits, &[label])?[0]);
        if argmax(logits.row(0)) != label {
            trace.misclassified += 1;
        }
        if trace.misclassified == cfg.k {
            break;
        }
    }
    trace.params = params;
    Ok(trace)
}

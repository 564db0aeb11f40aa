//! Inner maximization.
//!
//! [`generate_augmax`] searches for the worst-case mixing parameters of a set
//! of already sampled chains with early-stopped sign-gradient ascent:
//!
//! ```text
//! m, p ~ U[0, 1];  w = softmax(p);  x* = g(x; m, w);  c = 0
//! for i in 1..=n:
//!     m ← clip(m + α·sign(∂L/∂m), 0, 1)
//!     p ← p + α·sign(∂L/∂p)
//!     x* ← g(x; m, softmax(p))
//!     if argmax f(x*) ≠ y: c ← c + 1
//!     if c = k: break
//! ```
//!
//! Both partial derivatives come from one forward/backward pass at the current
//! `x*`. The model is always queried in eval mode on the adversarial route, so
//! running statistics are never touched.
//!
//! The ablation attacks live here too: pixel-space PGD and the worst-of-k
//! search over augmentation hyperparameters used by AdvMix and AdvMax.

use serde::{Deserialize, Serialize};

use crate::augops::{resample_severities, sample_chains, AugChain};
use crate::diffcore::loss::{argmax, cross_entropy_with_grad, per_sample_cross_entropy};
use crate::diffcore::Network;
use crate::error::{Error, Result};
use crate::mixer::{chain_outputs, mix, mix_backward, uniform_params, MixParams, MixingDistribution};
use crate::normlayers::NormRoute;
use crate::seed;
use crate::tensor::Tensor;

/// Route every adversary query uses.
pub const ATTACK_ROUTE: NormRoute = NormRoute::Adversarial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Maximum number of ascent steps.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Stop once this many steps ended misclassified.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Step size for both `m` and `p`.
    #[serde(default = "default_alpha")]
    pub alpha: f32,
    /// Seed of the `(m, p)` initialization; not part of config files.
    #[serde(skip)]
    pub seed: u64,
}

fn default_n() -> usize {
    10
}

fn default_k() -> usize {
    1
}

fn default_alpha() -> f32 {
    0.1
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            k: default_k(),
            alpha: default_alpha(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("attack needs at least one step (n >= 1)".into()));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::Config(format!("early-stop count k={} must be in [1, n={}]", self.k, self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub x_star: Tensor,
    pub params: MixParams,
    pub steps_taken: usize,
    /// Loss at `x*` after each step.
    pub loss_trace: Vec<f64>,
    /// Misclassification counter when the loop ended.
    pub misclassified: usize,
}

/// One sample of a batched attack.
#[derive(Debug, Clone, Copy)]
pub struct AttackTarget<'a> {
    pub x: &'a Tensor,
    pub label: usize,
    pub outputs: &'a [Tensor],
    /// Seed of the random `(m, p)` initialization.
    pub seed: u64,
}

fn sign(v: f64) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct State {
    params: MixParams,
    x_star: Tensor,
    steps: usize,
    count: usize,
    trace: Vec<f64>,
    done: bool,
}

/// Learned worst-case mixing for one image and its pre-sampled chains.
pub fn generate_augmax(
    x: &Tensor,
    label: usize,
    model: &Network,
    chains: &[AugChain],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let outputs = chain_outputs(x, chains)?;
    let target = AttackTarget {
        x,
        label,
        outputs: &outputs,
        seed: cfg.seed,
    };
    Ok(generate_augmax_batch(&[target], model, cfg)?.remove(0))
}

/// Batched [`generate_augmax`]; each target keeps its own state and stops
/// independently. `cfg.seed` is ignored in favor of the per-target seeds.
pub fn generate_augmax_batch(
    targets: &[AttackTarget<'_>],
    model: &Network,
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    generate_augmax_observed(targets, model, cfg, |_, _, _| {})
}

/// [`generate_augmax_batch`] that reports `(target, step, params)` right
/// after every update of a target's mixing parameters.
pub fn generate_augmax_observed(
    targets: &[AttackTarget<'_>],
    model: &Network,
    cfg: &AttackConfig,
    mut on_step: impl FnMut(usize, usize, &MixParams),
) -> Result<Vec<AttackResult>> {
    cfg.validate()?;
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let mut states = targets
        .iter()
        .map(|t| {
            let params = uniform_params(t.outputs.len(), &mut seed::stream(t.seed, "augmax-init", 0));
            let x_star = mix(t.x, t.outputs, &params)?;
            Ok(State {
                params,
                x_star,
                steps: 0,
                count: 0,
                trace: Vec::with_capacity(cfg.n),
                done: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let forward = |states: &[State], active: &[usize]| {
        let batch: Vec<Tensor> = active.iter().map(|&i| states[i].x_star.clone()).collect();
        model.forward_eval(&Tensor::stack(&batch)?, ATTACK_ROUTE)
    };

    let mut active: Vec<usize> = (0..targets.len()).collect();
    let mut current = forward(&states, &active)?;
    for step in 1..=cfg.n {
        let (logits, tape) = &current;
        let labels: Vec<usize> = active.iter().map(|&i| targets[i].label).collect();
        // per-sample (unaveraged) gradients
        let (_, grad) = cross_entropy_with_grad(logits, &labels, active.len() as f64)?;
        let dx = model.input_grad(tape, &grad)?;
        for (row, &i) in active.iter().enumerate() {
            let t = &targets[i];
            let g = Tensor::new(t.x.shape().to_vec(), dx.row(row).to_vec())?;
            let (dm, dp) = mix_backward(t.x, t.outputs, &states[i].params, &g)?;
            if !dm.is_finite() || dp.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite mixing gradient at attack step {step} (sample {i})"
                )));
            }
            let s = &mut states[i];
            let m = s.params.m() + cfg.alpha * sign(dm);
            s.params.set_m_clipped(m);
            for (p, d) in s.params.logits_mut().iter_mut().zip(&dp) {
                *p += cfg.alpha * sign(*d);
            }
            on_step(i, step, &s.params);
            s.x_star = mix(t.x, t.outputs, &s.params)?;
        }

        let (logits, tape) = forward(&states, &active)?;
        let losses = per_sample_cross_entropy(&logits, &labels)?;
        for (row, &i) in active.iter().enumerate() {
            let s = &mut states[i];
            s.steps = step;
            s.trace.push(losses[row]);
            if argmax(logits.row(row)) != targets[i].label {
                s.count += 1;
            }
            if s.count == cfg.k {
                s.done = true;
            }
        }
        let still: Vec<usize> = active.iter().copied().filter(|&i| !states[i].done).collect();
        if still.is_empty() || step == cfg.n {
            break;
        }
        current = if still.len() == active.len() {
            (logits, tape)
        } else {
            forward(&states, &still)?
        };
        active = still;
    }

    Ok(states
        .into_iter()
        .map(|s| AttackResult {
            x_star: s.x_star,
            params: s.params,
            steps_taken: s.steps,
            loss_trace: s.trace,
            misclassified: s.count,
        })
        .collect())
}

/// L∞ projected sign-gradient ascent on pixels, starting at `x` (no random
/// start). `x` is a batch `[N, C, H, W]`.
pub fn pgd_pixels(
    x: &Tensor,
    labels: &[usize],
    model: &Network,
    eps: f32,
    steps: usize,
    step_size: f32,
) -> Result<Tensor> {
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("PGD radius must be non-negative, got {eps}")));
    }
    if steps > 0 && !(step_size > 0.0) {
        return Err(Error::Config(format!("PGD step size must be positive, got {step_size}")));
    }
    let mut adv = x.clone();
    for step in 0..steps {
        let (logits, tape) = model.forward_eval(&adv, ATTACK_ROUTE)?;
        let (_, grad) = cross_entropy_with_grad(&logits, labels, labels.len() as f64)?;
        let g = model.input_grad(&tape, &grad)?;
        if !g.all_finite() {
            return Err(Error::Numerical(format!("non-finite pixel gradient at PGD step {step}")));
        }
        for ((a, &o), &gi) in adv.data_mut().iter_mut().zip(x.data()).zip(g.data()) {
            let moved = *a + step_size * sign(gi as f64);
            *a = moved.clamp(o - eps, o + eps).clamp(0.0, 1.0);
        }
    }
    Ok(adv)
}

/// Worst-of-k search over augmentation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorstOfKConfig {
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub mixing: MixingDistribution,
}

fn default_candidates() -> usize {
    5
}

fn default_chains() -> usize {
    3
}

impl Default for WorstOfKConfig {
    fn default() -> Self {
        Self {
            candidates: default_candidates(),
            chains: default_chains(),
            mixing: MixingDistribution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorstOfK {
    /// The highest-loss candidate.
    pub chains: Vec<AugChain>,
    pub outputs: Vec<Tensor>,
    /// The random mixing shared by all candidates.
    pub params: MixParams,
    /// Loss of every candidate, in sampling order.
    pub losses: Vec<f64>,
    pub best: usize,
}

/// Samples operator kinds and mixing parameters exactly like
/// [`crate::mixer::augmix_sample`] with `seed`; candidate 0 keeps those
/// severities, candidates `1..k` redraw severities and directions. Returns the
/// candidate whose mixed image has the largest loss (first one on ties).
pub fn worst_of_k_chains(
    x: &Tensor,
    label: usize,
    model: &Network,
    cfg: &WorstOfKConfig,
    seed: u64,
) -> Result<WorstOfK> {
    if cfg.candidates == 0 {
        return Err(Error::Config("worst-of-k needs at least one candidate".into()));
    }
    if cfg.chains == 0 {
        return Err(Error::Config("need at least one augmentation chain".into()));
    }
    let base = sample_chains(seed, cfg.chains);
    let params = cfg.mixing.sample(cfg.chains, &mut seed::stream(seed, "mix", 0))?;
    let mut candidates = vec![base.clone()];
    for j in 1..cfg.candidates {
        candidates.push(
            base.iter()
                .enumerate()
                .map(|(i, c)| resample_severities(c, seed, (j * cfg.chains + i) as u64))
                .collect(),
        );
    }
    let mut outputs = Vec::with_capacity(candidates.len());
    let mut images = Vec::with_capacity(candidates.len());
    for chains in &candidates {
        let out = chain_outputs(x, chains)?;
        images.push(mix(x, &out, &params)?);
        outputs.push(out);
    }
    let logits = model.infer(&Tensor::stack(&images)?, ATTACK_ROUTE)?;
    let losses = per_sample_cross_entropy(&logits, &vec![label; images.len()])?;
    let best = losses
        .iter()
        .enumerate()
        .fold(0, |b, (i, &l)| if l > losses[b] { i } else { b });
    Ok(WorstOfK {
        chains: candidates.swap_remove(best),
        outputs: outputs.swap_remove(best),
        params,
        losses,
        best,
    })
}

/// Worst-of-k hyperparameters with random mixing.
pub fn advmix(x: &Tensor, label: usize, model: &Network, cfg: &WorstOfKConfig, seed: u64) -> Result<Tensor> {
    let w = worst_of_k_chains(x, label, model, cfg, seed)?;
    mix(x, &w.outputs, &w.params)
}

/// Worst-of-k hyperparameters, then learned worst-case mixing on the chosen
/// chains. The worst-of-k draw uses `attack.seed`, as does the mixing init.
pub fn advmax(
    x: &Tensor,
    label: usize,
    model: &Network,
    cfg: &WorstOfKConfig,
    attack: &AttackConfig,
) -> Result<AttackResult> {
    let w = worst_of_k_chains(x, label, model, cfg, attack.seed)?;
    let target = AttackTarget {
        x,
        label,
        outputs: &w.outputs,
        seed: attack.seed,
    };
    Ok(generate_augmax_batch(&[target], model, attack)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::layers::{Dense, Layer};
    use crate::model::{build, ModelConfig};
    use crate::normlayers::NormKind;
    use rand::Rng;

    fn tiny_model(seed: u64) -> Network {
        build(&ModelConfig {
            input_shape: [3, 8, 8],
            classes: 3,
            norm: NormKind::Dubin,
            widths: [4, 4, 6],
            seed,
        })
        .unwrap()
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = seed::stream(seed, "adv-test", 0);
        Tensor::new(vec![3, 8, 8], (0..192).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    /// Flattens the image and always predicts class 1.
    fn constant_predictor() -> Network {
        let mut fc = Dense::new(3 * 8 * 8, 3);
        fc.bias = Tensor::new(vec![3], vec![0.0, 5.0, 0.0]).unwrap();
        fc.weight.data_mut().iter_mut().enumerate().for_each(|(i, w)| *w = 1e-3 * ((i % 7) as f32 - 3.0));
        Network::new(vec![3, 8, 8], vec![("flatten".into(), Layer::Flatten), ("fc".into(), Layer::Dense(fc))])
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig { n: 0, k: 0, ..Default::default() }.validate().is_err());
        assert!(AttackConfig { n: 2, k: 3, ..Default::default() }.validate().is_err());
        assert!(AttackConfig { n: 1, k: 1, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn misclassified_start_stops_after_one_step() {
        let model = constant_predictor();
        let x = image(1);
        let chains = sample_chains(3, 3);
        let cfg = AttackConfig { n: 10, k: 1, alpha: 0.1, seed: 4 };
        let r = generate_augmax(&x, 0, &model, &chains, &cfg).unwrap();
        assert_eq!(r.steps_taken, 1);
        assert_eq!(r.loss_trace.len(), 1);
        // correctly classified everywhere: runs all n steps
        let r = generate_augmax(&x, 1, &model, &chains, &cfg).unwrap();
        assert_eq!(r.steps_taken, 10);
        assert_eq!(r.misclassified, 0);
    }

    #[test]
    fn single_step_applies_one_update() {
        let model = tiny_model(2);
        let x = image(2);
        let chains = sample_chains(5, 2);
        let cfg = AttackConfig { n: 1, k: 1, alpha: 0.1, seed: 9 };
        let r = generate_augmax(&x, 0, &model, &chains, &cfg).unwrap();
        assert_eq!(r.steps_taken, 1);
        let init = uniform_params(2, &mut seed::stream(9, "augmax-init", 0));
        let dm = (r.params.m() - init.m()).abs();
        assert!(dm <= 0.1 + 1e-6);
        for (a, b) in r.params.logits().iter().zip(init.logits()) {
            assert!(((a - b).abs() - 0.1).abs() < 1e-6 || a == b);
        }
    }

    #[test]
    fn constraints_hold_every_run() {
        let model = tiny_model(3);
        for s in 0..20 {
            let x = image(100 + s);
            let chains = sample_chains(s, 3);
            let cfg = AttackConfig { n: 5, k: 5, alpha: 0.3, seed: s };
            let r = generate_augmax(&x, (s % 3) as usize, &model, &chains, &cfg).unwrap();
            assert!((0.0..=1.0).contains(&r.params.m()));
            let total: f32 = r.params.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-6);
            assert!(r.steps_taken <= 5);
            assert!(r.x_star.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn batch_matches_single() {
        let model = tiny_model(4);
        let xs: Vec<Tensor> = (0..3).map(|i| image(40 + i)).collect();
        let outs: Vec<Vec<Tensor>> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| chain_outputs(x, &sample_chains(i as u64, 3)).unwrap())
            .collect();
        let cfg = AttackConfig { n: 4, k: 2, alpha: 0.1, seed: 0 };
        let targets: Vec<AttackTarget> = (0..3)
            .map(|i| AttackTarget { x: &xs[i], label: i, outputs: &outs[i], seed: 70 + i as u64 })
            .collect();
        let batch = generate_augmax_batch(&targets, &model, &cfg).unwrap();
        for (i, t) in targets.iter().enumerate() {
            let single = generate_augmax_batch(&[*t], &model, &cfg).unwrap().remove(0);
            assert_eq!(single.steps_taken, batch[i].steps_taken);
            assert_eq!(single.params.m(), batch[i].params.m());
            assert!(single.x_star.max_abs_diff(&batch[i].x_star) < 1e-6);
        }
    }

    #[test]
    fn pgd_degenerate_cases() {
        let model = tiny_model(5);
        let x = Tensor::stack(&[image(5), image(6)]).unwrap();
        assert_eq!(pgd_pixels(&x, &[0, 1], &model, 0.03, 0, 0.01).unwrap(), x);
        assert_eq!(pgd_pixels(&x, &[0, 1], &model, 0.0, 5, 0.01).unwrap(), x);
        let adv = pgd_pixels(&x, &[0, 1], &model, 0.03, 5, 0.01).unwrap();
        assert!(adv.max_abs_diff(&x) <= 0.03 + 1e-7);
    }

    #[test]
    fn worst_of_k_reductions() {
        let model = tiny_model(6);
        let x = image(7);
        let cfg = WorstOfKConfig { candidates: 1, ..Default::default() };
        let mixed = advmix(&x, 2, &model, &cfg, 11).unwrap();
        let reference = crate::mixer::augmix_sample(&x, 11, 3, &cfg.mixing).unwrap();
        assert_eq!(mixed, reference.image);

        let attack = AttackConfig { seed: 11, ..Default::default() };
        let a = advmax(&x, 2, &model, &cfg, &attack).unwrap();
        let b = generate_augmax(&x, 2, &model, &sample_chains(11, 3), &attack).unwrap();
        assert_eq!(a.x_star, b.x_star);
        assert_eq!(a.steps_taken, b.steps_taken);
    }

    #[test]
    fn worst_of_k_returns_max_loss_candidate() {
        let model = tiny_model(8);
        let x = image(9);
        let cfg = WorstOfKConfig::default();
        let w = worst_of_k_chains(&x, 1, &model, &cfg, 21).unwrap();
        assert_eq!(w.losses.len(), 5);
        let max = w.losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(w.losses[w.best], max);
        // re-evaluate the returned candidate independently
        let img = mix(&x, &chain_outputs(&x, &w.chains).unwrap(), &w.params).unwrap();
        let logits = model.infer(&Tensor::stack(&[img]).unwrap(), ATTACK_ROUTE).unwrap();
        let loss = per_sample_cross_entropy(&logits, &[1]).unwrap()[0];
        assert_eq!(loss, max);
    }
}

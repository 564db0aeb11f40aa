//! The mixing function shared by AugMix and AugMax:
//!
//! ```text
//! g(x; m, w) = m·x + (1 − m)·Σᵢ wᵢ·chainᵢ(x),   w = softmax(p)
//! ```
//!
//! `m ∈ [0, 1]` weights the original image; the simplex weights `w` are kept
//! as unconstrained logits `p` so that gradient ascent can move them freely.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::augops::{apply_chain, sample_chains, AugChain};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Mixing scalar and chain logits for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MixParams {
    m: f32,
    p: Vec<f32>,
}

impl MixParams {
    pub fn new(m: f32, p: Vec<f32>) -> Result<Self> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::Input(format!("mixing scalar {m} outside [0, 1]")));
        }
        if p.is_empty() || p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("chain logits must be finite and non-empty, got {p:?}")));
        }
        Ok(Self { m, p })
    }

    /// Parameters whose softmax reproduces the simplex weights `w`.
    pub fn from_weights(m: f32, w: &[f32]) -> Result<Self> {
        if w.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Input(format!("weights must be non-negative, got {w:?}")));
        }
        Self::new(m, w.iter().map(|&v| v.max(1e-30).ln()).collect())
    }

    pub fn m(&self) -> f32 {
        self.m
    }

    pub fn logits(&self) -> &[f32] {
        &self.p
    }

    pub fn chains(&self) -> usize {
        self.p.len()
    }

    /// `w = softmax(p)`, recomputed on every call.
    pub fn weights(&self) -> Vec<f32> {
        softmax_reparam(&self.p)
    }

    /// Sets `m`, clipping into `[0, 1]`.
    pub fn set_m_clipped(&mut self, m: f32) {
        self.m = m.clamp(0.0, 1.0);
    }

    pub fn logits_mut(&mut self) -> &mut [f32] {
        &mut self.p
    }
}

fn softmax_f64(p: &[f32]) -> Vec<f64> {
    let max = p.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
    let e: Vec<f64> = p.iter().map(|&v| (v as f64 - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Softmax onto the probability simplex.
pub fn softmax_reparam(p: &[f32]) -> Vec<f32> {
    softmax_f64(p).into_iter().map(|v| v as f32).collect()
}

/// Vector-Jacobian product of the softmax: `(diag(w) − wwᵀ)·dw`.
pub fn softmax_vjp(w: &[f64], dw: &[f64]) -> Vec<f64> {
    let dot: f64 = w.iter().zip(dw).map(|(a, b)| a * b).sum();
    w.iter().zip(dw).map(|(wi, di)| wi * (di - dot)).collect()
}

fn check_shapes(x: &Tensor, chain_outputs: &[Tensor], params: &MixParams) -> Result<()> {
    if chain_outputs.len() != params.chains() {
        return Err(Error::Input(format!(
            "{} chain outputs for {} mixing weights",
            chain_outputs.len(),
            params.chains()
        )));
    }
    if let Some(bad) = chain_outputs.iter().find(|c| c.shape() != x.shape()) {
        return Err(Error::Input(format!(
            "chain output {:?} does not match image {:?}",
            bad.shape(),
            x.shape()
        )));
    }
    Ok(())
}

/// `Σᵢ wᵢ·cᵢ` in double precision.
fn weighted_sum(chain_outputs: &[Tensor], w: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0f64; chain_outputs[0].len()];
    for (c, &wi) in chain_outputs.iter().zip(w) {
        for (a, &v) in acc.iter_mut().zip(c.data()) {
            *a += wi * v as f64;
        }
    }
    acc
}

/// `m·x + (1 − m)·Σᵢ wᵢ·cᵢ`. A convex combination, so inputs in `[0, 1]`
/// give outputs in `[0, 1]` without clipping.
pub fn mix(x: &Tensor, chain_outputs: &[Tensor], params: &MixParams) -> Result<Tensor> {
    check_shapes(x, chain_outputs, params)?;
    let w = softmax_f64(&params.p);
    let m = params.m as f64;
    let data = weighted_sum(chain_outputs, &w)
        .into_iter()
        .zip(x.data())
        .map(|(a, &v)| (m * v as f64 + (1.0 - m) * a) as f32)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Gradients of a loss w.r.t. `m` and `p`, given its gradient w.r.t. the mixed image.
pub fn mix_backward(
    x: &Tensor,
    chain_outputs: &[Tensor],
    params: &MixParams,
    grad_mixed: &Tensor,
) -> Result<(f64, Vec<f64>)> {
    check_shapes(x, chain_outputs, params)?;
    if grad_mixed.shape() != x.shape() {
        return Err(Error::Input(format!(
            "gradient {:?} does not match image {:?}",
            grad_mixed.shape(),
            x.shape()
        )));
    }
    let w = softmax_f64(&params.p);
    let m = params.m as f64;
    let g = grad_mixed.data();
    let mixture = weighted_sum(chain_outputs, &w);
    let dm = g
        .iter()
        .zip(x.data())
        .zip(&mixture)
        .map(|((&gi, &xi), &ai)| gi as f64 * (xi as f64 - ai))
        .sum();
    let dw: Vec<f64> = chain_outputs
        .iter()
        .map(|c| (1.0 - m) * g.iter().zip(c.data()).map(|(&gi, &ci)| gi as f64 * ci as f64).sum::<f64>())
        .collect();
    Ok((dm, softmax_vjp(&w, &dw)))
}

/// Distributions AugMix draws its mixing parameters from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingDistribution {
    /// `m ~ Beta(beta_a, beta_b)`.
    pub beta_a: f64,
    pub beta_b: f64,
    /// `w ~ Dirichlet(alpha, …, alpha)`.
    pub dirichlet_alpha: f64,
}

impl Default for MixingDistribution {
    fn default() -> Self {
        Self {
            beta_a: 1.0,
            beta_b: 1.0,
            dirichlet_alpha: 1.0,
        }
    }
}

impl MixingDistribution {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_a > 0.0 && self.beta_b > 0.0 && self.dirichlet_alpha > 0.0) {
            return Err(Error::Config(format!("mixing distribution parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Draws `(m, w)` for `b` chains.
    pub fn sample(&self, b: usize, rng: &mut seed::Rng) -> Result<MixParams> {
        let beta = Beta::new(self.beta_a, self.beta_b)
            .map_err(|e| Error::Config(format!("beta distribution: {e}")))?;
        let gamma = Gamma::new(self.dirichlet_alpha, 1.0)
            .map_err(|e| Error::Config(format!("dirichlet distribution: {e}")))?;
        let m = beta.sample(rng) as f32;
        let mut g: Vec<f64> = (0..b).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 {
            g.iter_mut().for_each(|v| *v /= total);
        } else {
            g.fill(1.0 / b as f64);
        }
        let w: Vec<f32> = g.into_iter().map(|v| v as f32).collect();
        MixParams::from_weights(m.clamp(0.0, 1.0), &w)
    }
}

/// Random initialization used by the adversary: `m, pᵢ ~ U[0, 1]`.
pub fn uniform_params(b: usize, rng: &mut seed::Rng) -> MixParams {
    let m = rng.random::<f32>();
    let p = (0..b).map(|_| rng.random::<f32>()).collect();
    MixParams { m, p }
}

/// Applies every chain to `x`.
pub fn chain_outputs(x: &Tensor, chains: &[AugChain]) -> Result<Vec<Tensor>> {
    chains.iter().map(|c| apply_chain(x, c)).collect()
}

#[derive(Debug, Clone)]
pub struct AugMixSample {
    pub image: Tensor,
    pub chains: Vec<AugChain>,
    pub outputs: Vec<Tensor>,
    pub params: MixParams,
}

/// An AugMix image: `b` random chains mixed with random `(m, w)`.
/// Chains come from `sample_chains(seed, b)`, the mixing draw from the
/// `(seed, "mix", 0)` stream.
pub fn augmix_sample(x: &Tensor, seed: u64, b: usize, dist: &MixingDistribution) -> Result<AugMixSample> {
    if b == 0 {
        return Err(Error::Config("need at least one augmentation chain".into()));
    }
    let chains = sample_chains(seed, b);
    let outputs = chain_outputs(x, &chains)?;
    let params = dist.sample(b, &mut seed::stream(seed, "mix", 0))?;
    let image = mix(x, &outputs, &params)?;
    Ok(AugMixSample {
        image,
        chains,
        outputs,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64) -> Tensor {
        let mut rng = seed::stream(seed, "mixer-test", 0);
        Tensor::new(vec![3, 6, 6], (0..108).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(softmax_reparam(&[0.0, 0.0, 0.0]), vec![1.0 / 3.0; 3]);
        let w = softmax_reparam(&[2f32.ln(), 0.0, 0.0]);
        for (a, b) in w.iter().zip([0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let mut rng = seed::stream(3, "jac", 0);
        for _ in 0..10 {
            let p: Vec<f32> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w = softmax_f64(&p);
            for j in 0..4 {
                // column j of the Jacobian through the VJP with a unit vector
                for i in 0..4 {
                    let mut e = vec![0.0; 4];
                    e[i] = 1.0;
                    let analytic = softmax_vjp(&w, &e)[j];
                    let eps = 1e-3;
                    let mut hi = p.clone();
                    hi[j] += eps;
                    let mut lo = p.clone();
                    lo[j] -= eps;
                    let fd = (softmax_f64(&hi)[i] - softmax_f64(&lo)[i]) / (2.0 * eps as f64);
                    assert!((analytic - fd).abs() < 1e-4, "{analytic} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn endpoints() {
        let x = image(1);
        let chains = vec![image(2), image(3)];
        let keep = MixParams::new(1.0, vec![0.3, -0.2]).unwrap();
        assert_eq!(mix(&x, &chains, &keep).unwrap(), x);
        let pick = MixParams::from_weights(0.0, &[0.0, 1.0]).unwrap();
        assert!(mix(&x, &chains, &pick).unwrap().max_abs_diff(&chains[1]) < 1e-6);
    }

    #[test]
    fn matches_per_pixel_loop() {
        let x = image(4);
        let chains = vec![image(5), image(6), image(7)];
        let params = MixParams::new(0.37, vec![0.1, 1.2, -0.4]).unwrap();
        let y = mix(&x, &chains, &params).unwrap();
        let w = params.weights();
        for i in 0..x.len() {
            let mut v = params.m() * x.data()[i];
            for (c, wi) in chains.iter().zip(&w) {
                v += (1.0 - params.m()) * wi * c.data()[i];
            }
            assert!((v - y.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_and_constant_m() {
        let x = image(8);
        let chains = vec![image(9), image(10)];
        let params = MixParams::new(0.5, vec![0.2, 0.9]).unwrap();
        let (dm, dp) = mix_backward(&x, &chains, &params, &Tensor::zeros(&[3, 6, 6])).unwrap();
        assert_eq!(dm, 0.0);
        assert!(dp.iter().all(|&v| v == 0.0));

        let same = vec![x.clone(), x.clone()];
        let g = image(11);
        let (dm, _) = mix_backward(&x, &same, &params, &g).unwrap();
        assert!(dm.abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = image(1);
        let params = MixParams::new(0.5, vec![0.0, 0.0]).unwrap();
        assert!(mix(&x, &[image(2)], &params).is_err());
        let small = Tensor::zeros(&[3, 5, 6]);
        assert!(mix(&x, &[image(2), small], &params).is_err());
    }

    #[test]
    fn augmix_is_deterministic_and_in_range() {
        let x = image(12);
        let dist = MixingDistribution::default();
        let a = augmix_sample(&x, 42, 3, &dist).unwrap();
        let b = augmix_sample(&x, 42, 3, &dist).unwrap();
        assert_eq!(a.image, b.image);
        for s in 0..50 {
            let t = augmix_sample(&x, s, 3, &dist).unwrap();
            assert!(t.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn beta_mean() {
        let dist = MixingDistribution::default();
        let mut rng = seed::stream(5, "beta", 0);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| dist.sample(3, &mut rng).unwrap().m() as f64).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }
}

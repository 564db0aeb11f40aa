//! Normalization layers: BN, IN, DuBN and DuBIN.
//!
//! All four kinds share one implementation. Each channel is either an
//! *instance* channel (normalized per sample plane, no running statistics) or
//! a *batch* channel (normalized over the batch, running statistics per
//! route). The kinds differ only in how the channels are split:
//!
//! | kind  | instance channels | batch channels | statistic sets |
//! |-------|-------------------|----------------|----------------|
//! | BN    | none              | all            | 1              |
//! | IN    | all               | none           | 0              |
//! | DuBN  | none              | all            | 2 (clean, adv) |
//! | DuBIN | first half        | second half    | 2 (clean, adv) |
//!
//! The affine scale and shift cover all channels and are shared by both
//! routes.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f32 = 1e-5;
pub const DEFAULT_MOMENTUM: f32 = 0.1;

/// Which statistics branch a forward pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormRoute {
    Clean,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Bn,
    In,
    Dubn,
    Dubin,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::Bn => "BN",
            NormKind::In => "IN",
            NormKind::Dubn => "DuBN",
            NormKind::Dubin => "DuBIN",
        }
    }

    pub fn is_dual(self) -> bool {
        matches!(self, NormKind::Dubn | NormKind::Dubin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormLayer {
    kind: NormKind,
    channels: usize,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
    stats: Vec<RunningStats>,
    eps: f32,
    momentum: f32,
}

/// Values saved by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    x_hat: Tensor,
    /// Inverse standard deviation per (sample, channel).
    inv_std: Vec<f32>,
    batch_stats: bool,
}

/// Channel-mean running variances of a dual-branch layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStatsReport {
    pub layer: String,
    pub clean_var: f64,
    pub adv_var: f64,
}

impl NormLayer {
    pub fn new(kind: NormKind, channels: usize) -> Result<Self> {
        Self::with_options(kind, channels, DEFAULT_EPS, DEFAULT_MOMENTUM)
    }

    pub fn with_options(kind: NormKind, channels: usize, eps: f32, momentum: f32) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("norm layer needs at least one channel".into()));
        }
        if kind == NormKind::Dubin && channels % 2 != 0 {
            return Err(Error::Config(format!(
                "DuBIN needs an even channel count, got {channels}"
            )));
        }
        if !(eps > 0.0) || !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Config(format!(
                "norm eps must be positive and momentum in (0,1), got eps={eps} momentum={momentum}"
            )));
        }
        let mut layer = Self {
            kind,
            channels,
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            stats: Vec::new(),
            eps,
            momentum,
        };
        let sets = match kind {
            NormKind::Bn => 1,
            NormKind::In => 0,
            NormKind::Dubn | NormKind::Dubin => 2,
        };
        let n = layer.batch_channels().len();
        layer.stats = (0..sets).map(|_| RunningStats::new(n)).collect();
        Ok(layer)
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn eps(&self) -> f32 {
        self.eps
    }

    pub fn momentum(&self) -> f32 {
        self.momentum
    }

    /// Channels normalized per sample plane.
    pub fn instance_channels(&self) -> Range<usize> {
        match self.kind {
            NormKind::Bn | NormKind::Dubn => 0..0,
            NormKind::In => 0..self.channels,
            NormKind::Dubin => 0..self.channels / 2,
        }
    }

    /// Channels normalized with batch (or running) statistics.
    pub fn batch_channels(&self) -> Range<usize> {
        match self.kind {
            NormKind::Bn | NormKind::Dubn => 0..self.channels,
            NormKind::In => self.channels..self.channels,
            NormKind::Dubin => self.channels / 2..self.channels,
        }
    }

    fn stats_index(&self, route: NormRoute) -> Option<usize> {
        match (self.kind, route) {
            (NormKind::In, _) => None,
            (NormKind::Bn, _) => Some(0),
            (_, NormRoute::Clean) => Some(0),
            (_, NormRoute::Adversarial) => Some(1),
        }
    }

    /// Running statistics of the branch a route selects (`None` for IN).
    pub fn running(&self, route: NormRoute) -> Option<&RunningStats> {
        self.stats_index(route).map(|i| &self.stats[i])
    }

    pub fn running_mut(&mut self, route: NormRoute) -> Option<&mut RunningStats> {
        self.stats_index(route).map(move |i| &mut self.stats[i])
    }

    /// All statistic sets with their route tag (`None` tag for single-set BN).
    pub fn stat_sets(&self) -> Vec<(Option<NormRoute>, &RunningStats)> {
        match self.stats.len() {
            1 => vec![(None, &self.stats[0])],
            2 => vec![
                (Some(NormRoute::Clean), &self.stats[0]),
                (Some(NormRoute::Adversarial), &self.stats[1]),
            ],
            _ => Vec::new(),
        }
    }

    pub fn stat_sets_mut(&mut self) -> Vec<(Option<NormRoute>, &mut RunningStats)> {
        let dual = self.stats.len() == 2;
        self.stats
            .iter_mut()
            .enumerate()
            .map(|(i, s)| {
                let tag = match (dual, i) {
                    (false, _) => None,
                    (true, 0) => Some(NormRoute::Clean),
                    (true, _) => Some(NormRoute::Adversarial),
                };
                (tag, s)
            })
            .collect()
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        match x.shape() {
            &[n, c, h, w] if c == self.channels => Ok((n, c, h * w)),
            s => Err(Error::Input(format!(
                "{} layer with {} channels got input {s:?}",
                self.kind.name(),
                self.channels
            ))),
        }
    }

    /// Normalizes `x`; updates the routed running statistics when `training`.
    pub fn forward(
        &mut self,
        x: &Tensor,
        route: NormRoute,
        training: bool,
    ) -> Result<(Tensor, NormCache)> {
        let (y, cache, batch) = self.normalize(x, route, training)?;
        if let (Some((mean, var)), Some(idx)) = (batch, self.stats_index(route)) {
            let momentum = self.momentum;
            let stats = &mut self.stats[idx];
            for (i, (m, v)) in mean.into_iter().zip(var).enumerate() {
                stats.mean[i] = (1.0 - momentum) * stats.mean[i] + momentum * m;
                stats.var[i] = (1.0 - momentum) * stats.var[i] + momentum * v;
            }
        }
        Ok((y, cache))
    }

    /// Eval-mode forward: running statistics only, never mutates the layer.
    pub fn forward_eval(&self, x: &Tensor, route: NormRoute) -> Result<(Tensor, NormCache)> {
        let (y, cache, _) = self.normalize(x, route, false)?;
        Ok((y, cache))
    }

    #[allow(clippy::type_complexity)]
    fn normalize(
        &self,
        x: &Tensor,
        route: NormRoute,
        batch_stats: bool,
    ) -> Result<(Tensor, NormCache, Option<(Vec<f32>, Vec<f32>)>)> {
        let (n, c, hw) = self.dims(x)?;
        let inst = self.instance_channels();
        let batch = self.batch_channels();
        if !inst.is_empty() && hw < 2 {
            return Err(Error::Input(format!(
                "instance normalization needs at least 2 pixels per plane, got {hw}"
            )));
        }
        if batch_stats && !batch.is_empty() && n < 2 {
            return Err(Error::Input(format!(
                "batch normalization in training mode needs at least 2 samples, got {n}"
            )));
        }
        let xd = x.data();
        let mut x_hat = vec![0.0f32; xd.len()];
        let mut inv_std = vec![0.0f32; n * c];

        for ch in inst {
            for s in 0..n {
                let off = (s * c + ch) * hw;
                let plane = &xd[off..off + hw];
                let (mean, var) = mean_var(&[plane]);
                let inv = (1.0 / (var + self.eps as f64).sqrt()) as f32;
                let mean = mean as f32;
                for (o, &v) in x_hat[off..off + hw].iter_mut().zip(plane) {
                    *o = (v - mean) * inv;
                }
                inv_std[s * c + ch] = inv;
            }
        }

        let mut batch_moments = None;
        if !batch.is_empty() {
            let start = batch.start;
            let mut means = Vec::with_capacity(batch.len());
            let mut vars = Vec::with_capacity(batch.len());
            for ch in batch {
                let (mean, var) = if batch_stats {
                    let planes: Vec<&[f32]> = (0..n).map(|s| &xd[(s * c + ch) * hw..(s * c + ch + 1) * hw]).collect();
                    let (mean, var) = mean_var(&planes);
                    let m = (n * hw) as f64;
                    means.push(mean as f32);
                    vars.push((var * m / (m - 1.0).max(1.0)) as f32);
                    (mean, var)
                } else {
                    let idx = self.stats_index(route).expect("batch channels imply statistics");
                    let stats = &self.stats[idx];
                    (stats.mean[ch - start] as f64, stats.var[ch - start] as f64)
                };
                let inv = (1.0 / (var + self.eps as f64).sqrt()) as f32;
                let mean = mean as f32;
                for s in 0..n {
                    let off = (s * c + ch) * hw;
                    for (o, &v) in x_hat[off..off + hw].iter_mut().zip(&xd[off..off + hw]) {
                        *o = (v - mean) * inv;
                    }
                    inv_std[s * c + ch] = inv;
                }
            }
            if batch_stats {
                batch_moments = Some((means, vars));
            }
        }

        let gamma = self.gamma.data();
        let beta = self.beta.data();
        let mut y = x_hat.clone();
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for v in &mut y[off..off + hw] {
                    *v = gamma[ch] * *v + beta[ch];
                }
            }
        }
        let shape = x.shape().to_vec();
        Ok((
            Tensor::new(shape.clone(), y)?,
            NormCache {
                x_hat: Tensor::new(shape, x_hat)?,
                inv_std,
                batch_stats,
            },
            batch_moments,
        ))
    }

    /// Gradient w.r.t. the input; accumulates affine gradients when `accumulate`.
    pub fn backward(&mut self, cache: &NormCache, grad_out: &Tensor, accumulate: bool) -> Tensor {
        if accumulate {
            let (n, c, hw) = self.dims(grad_out).expect("cache matches layer");
            let dy = grad_out.data();
            let xh = cache.x_hat.data();
            let gg = self.grad_gamma.data_mut();
            for s in 0..n {
                for ch in 0..c {
                    let off = (s * c + ch) * hw;
                    let mut sg = 0.0f64;
                    for i in off..off + hw {
                        sg += (dy[i] * xh[i]) as f64;
                    }
                    gg[ch] += sg as f32;
                }
            }
            let gb = self.grad_beta.data_mut();
            for s in 0..n {
                for ch in 0..c {
                    let off = (s * c + ch) * hw;
                    gb[ch] += dy[off..off + hw].iter().map(|&v| v as f64).sum::<f64>() as f32;
                }
            }
        }
        self.input_grad(cache, grad_out)
    }

    /// Gradient w.r.t. the input only.
    pub fn input_grad(&self, cache: &NormCache, grad_out: &Tensor) -> Tensor {
        let (n, c, hw) = self.dims(grad_out).expect("cache matches layer");
        let dy = grad_out.data();
        let xh = cache.x_hat.data();
        let gamma = self.gamma.data();
        let mut dx = vec![0.0f32; dy.len()];

        // Shared formula for a normalization group of m values with one inverse std:
        // dx = inv/m * (m*g - sum(g) - x_hat * sum(g*x_hat)), g = gamma*dy.
        let group = |offsets: &mut dyn Iterator<Item = usize>, inv: f32, ch: usize, dx: &mut [f32]| {
            let offsets: Vec<usize> = offsets.collect();
            let m = (offsets.len() * hw) as f64;
            let (mut s1, mut s2) = (0.0f64, 0.0f64);
            for &off in &offsets {
                let (d, x) = (&dy[off..off + hw], &xh[off..off + hw]);
                let (mut a, mut b) = (0.0f32, 0.0f32);
                for (&dv, &xv) in d.iter().zip(x) {
                    a += dv;
                    b += dv * xv;
                }
                s1 += a as f64;
                s2 += b as f64;
            }
            let g = gamma[ch] as f64;
            let k = inv as f64 / m;
            let (c0, c1, c2) = ((k * m * g) as f32, (k * g * s1) as f32, (k * g * s2) as f32);
            for &off in &offsets {
                for ((o, &dv), &xv) in dx[off..off + hw].iter_mut().zip(&dy[off..off + hw]).zip(&xh[off..off + hw]) {
                    *o = c0 * dv - c1 - c2 * xv;
                }
            }
        };

        for ch in self.instance_channels() {
            for s in 0..n {
                let off = (s * c + ch) * hw;
                group(&mut std::iter::once(off), cache.inv_std[s * c + ch], ch, &mut dx);
            }
        }
        for ch in self.batch_channels() {
            let inv = cache.inv_std[ch];
            if cache.batch_stats {
                group(&mut (0..n).map(|s| (s * c + ch) * hw), inv, ch, &mut dx);
            } else {
                for s in 0..n {
                    let off = (s * c + ch) * hw;
                    for i in off..off + hw {
                        dx[i] = gamma[ch] * dy[i] * inv;
                    }
                }
            }
        }
        Tensor::new(grad_out.shape().to_vec(), dx).expect("same shape as grad_out")
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.data_mut().fill(0.0);
        self.grad_beta.data_mut().fill(0.0);
    }
}

fn mean_var(planes: &[&[f32]]) -> (f64, f64) {
    let count: usize = planes.iter().map(|p| p.len()).sum();
    let sum: f64 = planes.iter().map(|p| p.iter().sum::<f32>() as f64).sum();
    let mean = sum / count as f64;
    let m = mean as f32;
    let sq: f64 = planes
        .iter()
        .map(|p| p.iter().map(|&v| (v - m) * (v - m)).sum::<f32>() as f64)
        .sum();
    (mean, sq / count as f64)
}

/// Table-style report of the running variances of every dual-branch layer.
pub fn stats_report<'a>(layers: impl IntoIterator<Item = (&'a str, &'a NormLayer)>) -> Vec<NormStatsReport> {
    layers
        .into_iter()
        .filter(|(_, l)| l.kind.is_dual())
        .map(|(name, l)| {
            let channel_mean = |s: &RunningStats| {
                s.var.iter().map(|&v| v as f64).sum::<f64>() / s.var.len() as f64
            };
            NormStatsReport {
                layer: name.to_string(),
                clean_var: channel_mean(&l.stats[0]),
                adv_var: channel_mean(&l.stats[1]),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64, scale: f32) -> Tensor {
        let mut rng = crate::seed::stream(seed, "norm-test", 0);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let mut layer = NormLayer::new(NormKind::Bn, 2).unwrap();
        let x = Tensor::full(&[3, 2, 2, 2], 4.5);
        let (y, _) = layer.forward(&x, NormRoute::Clean, true).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_output_is_standardized() {
        let mut layer = NormLayer::new(NormKind::Bn, 3).unwrap();
        let x = random(&[4, 3, 5, 5], 1, 3.0);
        let (y, _) = layer.forward(&x, NormRoute::Clean, true).unwrap();
        for ch in 0..3 {
            let vals: Vec<f32> = (0..4).flat_map(|s| y.row(s)[ch * 25..(ch + 1) * 25].to_vec()).collect();
            let (mean, var) = mean_var(&[&vals]);
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn eval_matches_scalar_loop() {
        let mut layer = NormLayer::new(NormKind::Dubn, 2).unwrap();
        layer.gamma = Tensor::new(vec![2], vec![1.5, -0.5]).unwrap();
        layer.beta = Tensor::new(vec![2], vec![0.25, 2.0]).unwrap();
        {
            let s = layer.running_mut(NormRoute::Adversarial).unwrap();
            s.mean = vec![0.3, -1.0];
            s.var = vec![2.0, 0.5];
        }
        let x = random(&[2, 2, 3, 3], 2, 2.0);
        let (y, _) = layer.forward_eval(&x, NormRoute::Adversarial).unwrap();
        let (mean, var) = ([0.3f64, -1.0], [2.0f64, 0.5]);
        let (g, b) = ([1.5f64, -0.5], [0.25f64, 2.0]);
        for s in 0..2 {
            for ch in 0..2 {
                for i in 0..9 {
                    let v = x.row(s)[ch * 9 + i] as f64;
                    let want = g[ch] * (v - mean[ch]) / (var[ch] + 1e-5).sqrt() + b[ch];
                    let got = y.row(s)[ch * 9 + i] as f64;
                    assert!((want - got).abs() < 1e-6, "{want} vs {got}");
                }
            }
        }
    }

    #[test]
    fn batch_of_one_rejected_in_training() {
        let mut layer = NormLayer::new(NormKind::Bn, 1).unwrap();
        let x = random(&[1, 1, 2, 2], 3, 1.0);
        assert!(matches!(layer.forward(&x, NormRoute::Clean, true), Err(Error::Input(_))));
        assert!(layer.forward(&x, NormRoute::Clean, false).is_ok());
    }

    #[test]
    fn instance_norm_properties() {
        let mut layer = NormLayer::new(NormKind::In, 2).unwrap();
        let single = Tensor::full(&[2, 2, 1, 1], 1.0);
        assert!(matches!(layer.forward(&single, NormRoute::Clean, true), Err(Error::Input(_))));

        let x = random(&[2, 2, 4, 4], 4, 1.0);
        let (y, _) = layer.forward(&x, NormRoute::Clean, true).unwrap();
        let mut shifted = x.clone();
        for (i, v) in shifted.data_mut().iter_mut().enumerate() {
            *v += (i / 16) as f32 * 0.75;
        }
        let (y2, _) = layer.forward(&shifted, NormRoute::Clean, true).unwrap();
        assert!(y.max_abs_diff(&y2) < 1e-5);

        let constant = Tensor::full(&[2, 2, 4, 4], -2.0);
        let (z, _) = layer.forward(&constant, NormRoute::Clean, true).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dubin_splits_channels_in_half() {
        let layer = NormLayer::new(NormKind::Dubin, 64).unwrap();
        assert_eq!(layer.instance_channels(), 0..32);
        assert_eq!(layer.batch_channels(), 32..64);
        assert!(matches!(NormLayer::new(NormKind::Dubin, 5), Err(Error::Config(_))));
    }

    #[test]
    fn routes_update_only_their_branch() {
        let mut layer = NormLayer::new(NormKind::Dubn, 3).unwrap();
        let adv_before = layer.running(NormRoute::Adversarial).unwrap().clone();
        let x = random(&[4, 3, 2, 2], 5, 2.0);
        layer.forward(&x, NormRoute::Clean, true).unwrap();
        assert_eq!(layer.running(NormRoute::Adversarial).unwrap(), &adv_before);
        assert_ne!(layer.running(NormRoute::Clean).unwrap(), &adv_before);
    }

    #[test]
    fn fresh_report_is_one() {
        let layer = NormLayer::new(NormKind::Dubin, 8).unwrap();
        let bn = NormLayer::new(NormKind::Bn, 8).unwrap();
        let report = stats_report([("a", &layer), ("b", &bn)]);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].clean_var, 1.0);
        assert_eq!(report[0].adv_var, 1.0);
    }
}

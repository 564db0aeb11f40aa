//! Naive double-precision reference implementations.
//!
//! Nothing here calls the production numerics. Parameters are copied out of a
//! [`Network`] once and every operation is a direct scalar loop over `f64`.

use std::ops::Range;

use augmax::diffcore::{Layer, Network};
use augmax::{NormRoute, Tensor};

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// A dense activation with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Act {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "activation length");
        Self { shape, data }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self::new(t.shape().to_vec(), to_f64(t))
    }

    fn nchw(&self) -> (usize, usize, usize, usize) {
        match self.shape[..] {
            [n, c, h, w] => (n, c, h, w),
            _ => panic!("expected a 4-d activation, got {:?}", self.shape),
        }
    }

    /// Largest absolute difference to an f32 tensor of the same shape.
    pub fn max_abs_diff(&self, t: &Tensor) -> f64 {
        assert_eq!(self.shape, t.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Direct "same"-padded convolution without bias; `w` is `[out, in, k, k]`.
pub fn conv2d(x: &Act, w: &[f64], cout: usize, k: usize) -> Act {
    let (n, cin, h, wd) = x.nchw();
    assert_eq!(w.len(), cout * cin * k * k, "conv weight size");
    let pad = (k / 2) as isize;
    let mut y = vec![0.0; n * cout * h * wd];
    for s in 0..n {
        for o in 0..cout {
            for r in 0..h {
                for c in 0..wd {
                    let mut acc = 0.0;
                    for i in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sr = r as isize + ky as isize - pad;
                                let sc = c as isize + kx as isize - pad;
                                if sr < 0 || sc < 0 || sr >= h as isize || sc >= wd as isize {
                                    continue;
                                }
                                let xv = x.data[((s * cin + i) * h + sr as usize) * wd + sc as usize];
                                acc += w[((o * cin + i) * k + ky) * k + kx] * xv;
                            }
                        }
                    }
                    y[((s * cout + o) * h + r) * wd + c] = acc;
                }
            }
        }
    }
    Act::new(vec![n, cout, h, wd], y)
}

/// `y = x·Wᵀ + b` with `w` stored `[out, in]`.
pub fn dense(x: &Act, w: &[f64], b: &[f64]) -> Act {
    let n = x.shape[0];
    let inputs = x.data.len() / n;
    let out = b.len();
    assert_eq!(w.len(), out * inputs, "dense weight size");
    let mut y = vec![0.0; n * out];
    for s in 0..n {
        for o in 0..out {
            let mut acc = b[o];
            for i in 0..inputs {
                acc += w[o * inputs + i] * x.data[s * inputs + i];
            }
            y[s * out + o] = acc;
        }
    }
    Act::new(vec![n, out], y)
}

pub fn relu(x: &Act) -> Act {
    Act::new(x.shape.clone(), x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect())
}

/// Non-overlapping `k×k` mean pooling; trailing rows/columns are dropped.
pub fn avgpool(x: &Act, k: usize) -> Act {
    let (n, c, h, w) = x.nchw();
    let (oh, ow) = (h / k, w / k);
    let mut y = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        for r in 0..oh {
            for col in 0..ow {
                let mut acc = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        acc += x.data[(p * h + r * k + dy) * w + col * k + dx];
                    }
                }
                y[(p * oh + r) * ow + col] = acc / (k * k) as f64;
            }
        }
    }
    Act::new(vec![n, c, oh, ow], y)
}

pub fn global_avgpool(x: &Act) -> Act {
    let (n, c, h, w) = x.nchw();
    let y = (0..n * c)
        .map(|p| x.data[p * h * w..(p + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
        .collect();
    Act::new(vec![n, c, 1, 1], y)
}

pub fn flatten(x: &Act) -> Act {
    let n = x.shape[0];
    Act::new(vec![n, x.data.len() / n], x.data.clone())
}

/// Per-channel running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Everything a normalization layer needs, copied out of the library layer.
#[derive(Debug, Clone)]
pub struct NormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
    /// Channels normalized per (sample, channel) plane.
    pub instance: Range<usize>,
    /// Channels normalized with batch or running statistics.
    pub batch: Range<usize>,
    /// Running statistics per route, indexed by batch channel offset.
    pub clean: Option<Stats>,
    pub adversarial: Option<Stats>,
}

impl NormParams {
    pub fn stats(&self, route: NormRoute) -> Option<&Stats> {
        match route {
            NormRoute::Clean => self.clean.as_ref(),
            NormRoute::Adversarial => self.adversarial.as_ref(),
        }
    }
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    (mean, var)
}

/// Normalization with the biased variance; `training` uses batch statistics on
/// the batch channels, otherwise the routed running statistics.
pub fn normalize(x: &Act, p: &NormParams, route: NormRoute, training: bool) -> Act {
    let (n, c, h, w) = x.nchw();
    let hw = h * w;
    let mut y = x.data.clone();
    for ch in 0..c {
        let mut apply = |s: usize, mean: f64, var: f64| {
            let off = (s * c + ch) * hw;
            let inv = 1.0 / (var + p.eps).sqrt();
            for v in &mut y[off..off + hw] {
                *v = p.gamma[ch] * (*v - mean) * inv + p.beta[ch];
            }
        };
        if p.instance.contains(&ch) {
            for s in 0..n {
                let off = (s * c + ch) * hw;
                let (mean, var) = mean_var(x.data[off..off + hw].iter().copied());
                apply(s, mean, var);
            }
        } else if p.batch.contains(&ch) {
            let (mean, var) = if training {
                mean_var((0..n).flat_map(|s| x.data[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().copied()))
            } else {
                let stats = p.stats(route).expect("batch channels carry running statistics");
                let i = ch - p.batch.start;
                (stats.mean[i], stats.var[i])
            };
            for s in 0..n {
                apply(s, mean, var);
            }
        }
    }
    Act::new(x.shape.clone(), y)
}

#[derive(Debug, Clone)]
pub enum RefLayer {
    Conv { w: Vec<f64>, cout: usize, k: usize },
    Dense { w: Vec<f64>, b: Vec<f64> },
    Relu,
    Flatten,
    AvgPool(usize),
    GlobalAvgPool,
    Norm(NormParams),
}

/// Double-precision copy of a network.
#[derive(Debug, Clone)]
pub struct RefNet {
    pub layers: Vec<RefLayer>,
}

/// Output of a reference forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub output: Act,
    /// Sign of every ReLU input, in visiting order; a change between two
    /// forwards means a kink was crossed.
    pub relu_pattern: Vec<bool>,
}

impl RefNet {
    pub fn from_network(net: &Network) -> Self {
        let stats = |s: Option<&augmax::normlayers::RunningStats>| {
            s.map(|s| Stats {
                mean: s.mean.iter().map(|&v| v as f64).collect(),
                var: s.var.iter().map(|&v| v as f64).collect(),
            })
        };
        let layers = net
            .layers()
            .iter()
            .map(|(_, l)| match l {
                Layer::Conv2d(c) => RefLayer::Conv {
                    w: to_f64(&c.weight),
                    cout: c.out_channels(),
                    k: c.kernel(),
                },
                Layer::Dense(d) => RefLayer::Dense {
                    w: to_f64(&d.weight),
                    b: to_f64(&d.bias),
                },
                Layer::Relu => RefLayer::Relu,
                Layer::Flatten => RefLayer::Flatten,
                Layer::AvgPool(p) => RefLayer::AvgPool(p.size),
                Layer::GlobalAvgPool => RefLayer::GlobalAvgPool,
                Layer::Norm(n) => RefLayer::Norm(NormParams {
                    gamma: to_f64(&n.gamma),
                    beta: to_f64(&n.beta),
                    eps: n.eps() as f64,
                    instance: n.instance_channels(),
                    batch: n.batch_channels(),
                    clean: stats(n.running(NormRoute::Clean)),
                    adversarial: stats(n.running(NormRoute::Adversarial)),
                }),
            })
            .collect();
        Self { layers }
    }

    /// Forward through the first `depth` layers.
    pub fn forward_prefix(&self, x: &Act, route: NormRoute, training: bool, depth: usize) -> Trace {
        let mut a = x.clone();
        let mut relu_pattern = Vec::new();
        for layer in &self.layers[..depth] {
            a = match layer {
                RefLayer::Conv { w, cout, k } => conv2d(&a, w, *cout, *k),
                RefLayer::Dense { w, b } => dense(&a, w, b),
                RefLayer::Relu => {
                    relu_pattern.extend(a.data.iter().map(|&v| v > 0.0));
                    relu(&a)
                }
                RefLayer::Flatten => flatten(&a),
                RefLayer::AvgPool(k) => avgpool(&a, *k),
                RefLayer::GlobalAvgPool => global_avgpool(&a),
                RefLayer::Norm(p) => normalize(&a, p, route, training),
            };
        }
        Trace { output: a, relu_pattern }
    }

    pub fn forward(&self, x: &Act, route: NormRoute, training: bool) -> Trace {
        self.forward_prefix(x, route, training, self.layers.len())
    }

    /// Mean cross-entropy of the logits the network produces.
    pub fn loss(&self, x: &Act, labels: &[usize], route: NormRoute, training: bool) -> (f64, Vec<bool>) {
        let t = self.forward(x, route, training);
        (mean_cross_entropy(&t.output, labels), t.relu_pattern)
    }

    /// Trainable parameters in the library's order (conv weight; norm gamma,
    /// beta; dense weight, bias).
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                RefLayer::Conv { w, .. } => out.push(w),
                RefLayer::Dense { w, b } => {
                    out.push(w);
                    out.push(b);
                }
                RefLayer::Norm(p) => {
                    out.push(&mut p.gamma);
                    out.push(&mut p.beta);
                }
                _ => {}
            }
        }
        out
    }
}

/// `ln Σ exp(z)` with the maximum factored out.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub fn cross_entropy_row(z: &[f64], label: usize) -> f64 {
    log_sum_exp(z) - z[label]
}

pub fn mean_cross_entropy(logits: &Act, labels: &[usize]) -> f64 {
    let n = labels.len();
    let c = logits.data.len() / n;
    (0..n)
        .map(|i| cross_entropy_row(&logits.data[i * c..(i + 1) * c], labels[i]))
        .sum::<f64>()
        / n as f64
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|&v| (v - lse).exp()).collect()
}

/// `KL(p‖q)` with `0·ln 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// Three-way Jensen-Shannon divergence of already normalized distributions.
pub fn js3(p1: &[f64], p2: &[f64], p3: &[f64]) -> f64 {
    let m: Vec<f64> = (0..p1.len()).map(|i| (p1[i] + p2[i] + p3[i]) / 3.0).collect();
    (kl(p1, &m) + kl(p2, &m) + kl(p3, &m)) / 3.0
}

/// `m·x + (1 − m)·Σ wᵢ cᵢ`, one pixel at a time.
pub fn mix(x: &[f64], chains: &[Vec<f64>], m: f64, w: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut aug = 0.0;
            for (i, c) in chains.iter().enumerate() {
                aug += w[i] * c[j];
            }
            m * x[j] + (1.0 - m) * aug
        })
        .collect()
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// The `q`-quantile (0..=1) by linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let x = Act::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        assert_eq!(conv2d(&x, &w, 1, 3).data, x.data);
        let ones = conv2d(&x, &[1.0; 9], 1, 3);
        assert_eq!(ones.data, vec![10.0; 4]);
    }

    #[test]
    fn js_extremes() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        let c = [0.0, 0.0, 1.0];
        assert!((js3(&a, &b, &c) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(js3(&a, &a, &a), 0.0);
    }

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.9), 4.6);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((cross_entropy_row(&[0.0, 0.0, 0.0], 1) - 3f64.ln()).abs() < 1e-15);
    }
}

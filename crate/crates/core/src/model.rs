//! The SmallCNN classifier:
//!
//! ```text
//! conv(C→w1,3×3) → norm → relu → conv(w1→w2,3×3) → norm → relu → avgpool(2)
//!   → conv(w2→w3,3×3) → norm → relu → global-avgpool → flatten → dense(w3→classes)
//! ```
//!
//! with widths `(32, 64, 64)` by default and a pluggable norm kind.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::layers::{AvgPool, Conv2d, Dense, Layer};
use crate::diffcore::{loss, Network};
use crate::error::{Error, Result};
use crate::normlayers::{stats_report, NormKind, NormLayer, NormRoute, NormStatsReport};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Per-sample input shape `[C, H, W]`.
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub norm: NormKind,
    #[serde(default = "default_widths")]
    pub widths: [usize; 3],
    /// Initialization seed; set programmatically, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

fn default_widths() -> [usize; 3] {
    [32, 64, 64]
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_shape: [3, 32, 32],
            classes: 10,
            norm: NormKind::Dubin,
            widths: default_widths(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        let [c, h, w] = self.input_shape;
        if c == 0 || h < 2 || w < 2 {
            return Err(Error::Config(format!("input shape {:?} too small", self.input_shape)));
        }
        if let Some(&bad) = self.widths.iter().find(|&&w| w == 0) {
            return Err(Error::Config(format!("layer width {bad} must be positive")));
        }
        if self.norm == NormKind::Dubin {
            if let Some(&odd) = self.widths.iter().find(|&&w| w % 2 != 0) {
                return Err(Error::Config(format!("DuBIN needs even channel counts, got width {odd}")));
            }
        }
        Ok(())
    }

    /// Parameter count of the architecture.
    pub fn param_count(&self) -> usize {
        let c = self.input_shape[0];
        let [w1, w2, w3] = self.widths;
        9 * c * w1 + 2 * w1 + 9 * w1 * w2 + 2 * w2 + 9 * w2 * w3 + 2 * w3 + w3 * self.classes + self.classes
    }

    /// Width of the penultimate feature vector.
    pub fn feature_dim(&self) -> usize {
        self.widths[2]
    }
}

fn uniform(t: &mut Tensor, bound: f32, rng: &mut seed::Rng) {
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
}

/// Builds the network with a deterministic fan-in scaled uniform initialization.
pub fn build(cfg: &ModelConfig) -> Result<Network> {
    cfg.validate()?;
    let [c, _, _] = cfg.input_shape;
    let [w1, w2, w3] = cfg.widths;
    let mut layers: Vec<(String, Layer)> = Vec::new();
    let conv = |name: &str, cin: usize, cout: usize, layers: &mut Vec<(String, Layer)>| -> Result<()> {
        let mut conv = Conv2d::new(cin, cout, 3)?;
        let mut rng = seed::stream(cfg.seed, "init", layers.len() as u64);
        uniform(&mut conv.weight, (6.0 / (cin * 9) as f32).sqrt(), &mut rng);
        layers.push((name.into(), Layer::Conv2d(conv)));
        Ok(())
    };
    conv("conv1", c, w1, &mut layers)?;
    layers.push(("norm1".into(), Layer::Norm(NormLayer::new(cfg.norm, w1)?)));
    layers.push(("relu1".into(), Layer::Relu));
    conv("conv2", w1, w2, &mut layers)?;
    layers.push(("norm2".into(), Layer::Norm(NormLayer::new(cfg.norm, w2)?)));
    layers.push(("relu2".into(), Layer::Relu));
    layers.push(("pool".into(), Layer::AvgPool(AvgPool { size: 2 })));
    conv("conv3", w2, w3, &mut layers)?;
    layers.push(("norm3".into(), Layer::Norm(NormLayer::new(cfg.norm, w3)?)));
    layers.push(("relu3".into(), Layer::Relu));
    layers.push(("gap".into(), Layer::GlobalAvgPool));
    layers.push(("flatten".into(), Layer::Flatten));
    let mut fc = Dense::new(w3, cfg.classes);
    let mut rng = seed::stream(cfg.seed, "init", layers.len() as u64);
    let bound = 1.0 / (w3 as f32).sqrt();
    uniform(&mut fc.weight, bound, &mut rng);
    uniform(&mut fc.bias, bound, &mut rng);
    layers.push(("fc".into(), Layer::Dense(fc)));
    Ok(Network::new(cfg.input_shape.to_vec(), layers))
}

/// Eval-mode mean cross-entropy and its exact gradient w.r.t. `x`.
/// Parameters and running statistics are not touched.
pub fn loss_and_input_grad(
    model: &Network,
    x: &Tensor,
    labels: &[usize],
    route: NormRoute,
) -> Result<(f32, Tensor)> {
    let (logits, tape) = model.forward_eval(x, route)?;
    let (loss, grad) = loss::cross_entropy_with_grad(&logits, labels, 1.0)?;
    let dx = model.input_grad(&tape, &grad)?;
    Ok((loss, dx))
}

/// Activations feeding the final dense layer, `[N, F]`.
pub fn penultimate_features(model: &Network, x: &Tensor, route: NormRoute) -> Result<Tensor> {
    let depth = model.layers().len() - 1;
    model.infer_prefix(x, route, depth)
}

/// Eval-mode predicted classes (ties to the lowest index).
pub fn predict(model: &Network, x: &Tensor, route: NormRoute) -> Result<Vec<usize>> {
    let logits = model.infer(x, route)?;
    Ok((0..logits.batch()).map(|i| loss::argmax(logits.row(i))).collect())
}

/// Running-variance report of every dual-branch norm layer.
pub fn norm_stats(model: &Network) -> Vec<NormStatsReport> {
    stats_report(model.norm_layers())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(norm: NormKind) -> ModelConfig {
        ModelConfig {
            input_shape: [3, 8, 8],
            classes: 4,
            norm,
            widths: [4, 6, 8],
            seed: 11,
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build(&small(NormKind::Bn)).unwrap();
        let b = build(&small(NormKind::Bn)).unwrap();
        for ((na, ta), (nb, tb)) in a.params().into_iter().zip(b.params()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn odd_width_rejected_for_dubin() {
        let mut cfg = small(NormKind::Dubin);
        cfg.widths = [4, 5, 8];
        assert!(matches!(build(&cfg), Err(Error::Config(_))));
        cfg.norm = NormKind::Dubn;
        assert!(build(&cfg).is_ok());
    }

    #[test]
    fn parameter_count_formula() {
        let cfg = ModelConfig::default();
        let net = build(&cfg).unwrap();
        // 3*9*32 + 64 + 32*9*64 + 128 + 64*9*64 + 128 + 64*10 + 10
        assert_eq!(cfg.param_count(), 864 + 64 + 18432 + 128 + 36864 + 128 + 640 + 10);
        assert_eq!(net.param_count(), cfg.param_count());
    }

    #[test]
    fn features_have_fixed_width() {
        let cfg = ModelConfig { input_shape: [3, 8, 8], ..Default::default() };
        let net = build(&cfg).unwrap();
        let x = Tensor::full(&[2, 3, 8, 8], 0.3);
        let f = penultimate_features(&net, &x, NormRoute::Clean).unwrap();
        assert_eq!(f.shape(), &[2, 64]);
        assert_eq!(f.row(0), f.row(1));
    }

    #[test]
    fn zero_final_layer_gives_ln_classes() {
        let mut net = build(&small(NormKind::In)).unwrap();
        for (name, t) in net.params_mut() {
            if name.starts_with("fc.") {
                t.data_mut().fill(0.0);
            }
        }
        let x = Tensor::full(&[3, 3, 8, 8], 0.5);
        let (loss, _) = loss_and_input_grad(&net, &x, &[0, 1, 3], NormRoute::Clean).unwrap();
        assert!((loss as f64 - 4f64.ln()).abs() < 1e-6);
    }
}

//! Augmentation operators and random chain sampling.
//!
//! Images are `[C, H, W]` tensors with values in `[0, 1]`. The registry holds
//! nine operators; operators that overlap with the corruption benchmark
//! (contrast, brightness, noise, blur) are deliberately absent.
//!
//! Severity (1–10) maps to an operator parameter:
//!
//! | operator      | parameter                                   |
//! |---------------|---------------------------------------------|
//! | rotate        | ±3·s degrees                                |
//! | shear_x/y     | ±0.03·s                                     |
//! | translate_x/y | ±0.03·s·(width or height) pixels            |
//! | posterize     | max(4, round(8 − 0.5·s)) bits               |
//! | solarize      | invert values above 1 − 0.077·s             |
//! | autocontrast, equalize | no parameter                       |
//!
//! Geometric operators resample bilinearly about the image center and fill
//! out-of-frame pixels with 0. Their sign is part of the sampled op.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Autocontrast,
    Equalize,
    Posterize,
    Rotate,
    Solarize,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

pub const REGISTRY: [OpKind; 9] = [
    OpKind::Autocontrast,
    OpKind::Equalize,
    OpKind::Posterize,
    OpKind::Rotate,
    OpKind::Solarize,
    OpKind::ShearX,
    OpKind::ShearY,
    OpKind::TranslateX,
    OpKind::TranslateY,
];

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Autocontrast => "autocontrast",
            OpKind::Equalize => "equalize",
            OpKind::Posterize => "posterize",
            OpKind::Rotate => "rotate",
            OpKind::Solarize => "solarize",
            OpKind::ShearX => "shear_x",
            OpKind::ShearY => "shear_y",
            OpKind::TranslateX => "translate_x",
            OpKind::TranslateY => "translate_y",
        }
    }
}

/// An operator kind with a severity and, for geometric kinds, a direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugOp {
    kind: OpKind,
    severity: u8,
    negate: bool,
}

impl AugOp {
    pub fn new(kind: OpKind, severity: u8, negate: bool) -> Result<Self> {
        if !(1..=10).contains(&severity) {
            return Err(Error::Input(format!("severity {severity} outside [1, 10]")));
        }
        Ok(Self { kind, severity, negate })
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    pub fn negated(&self) -> bool {
        self.negate
    }

    /// The concrete transform for an image of `height × width`.
    pub fn operation(&self, height: usize, width: usize) -> Operation {
        let s = self.severity as f32;
        let sign = if self.negate { -1.0 } else { 1.0 };
        match self.kind {
            OpKind::Autocontrast => Operation::Autocontrast,
            OpKind::Equalize => Operation::Equalize,
            OpKind::Posterize => Operation::Posterize {
                bits: ((8.0 - 0.5 * s).round() as u8).max(4),
            },
            OpKind::Solarize => Operation::Solarize {
                threshold: 1.0 - 0.077 * s,
            },
            OpKind::Rotate => Operation::Rotate { degrees: sign * 3.0 * s },
            OpKind::ShearX => Operation::ShearX { factor: sign * 0.03 * s },
            OpKind::ShearY => Operation::ShearY { factor: sign * 0.03 * s },
            OpKind::TranslateX => Operation::TranslateX {
                pixels: sign * 0.03 * s * width as f32,
            },
            OpKind::TranslateY => Operation::TranslateY {
                pixels: sign * 0.03 * s * height as f32,
            },
        }
    }
}

/// A fully parameterized transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operation {
    Autocontrast,
    Equalize,
    Posterize { bits: u8 },
    Solarize { threshold: f32 },
    Rotate { degrees: f32 },
    ShearX { factor: f32 },
    ShearY { factor: f32 },
    TranslateX { pixels: f32 },
    TranslateY { pixels: f32 },
}

impl Operation {
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let &[c, h, w] = x.shape() else {
            panic!("image must be [C, H, W], got {:?}", x.shape());
        };
        let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
        let out = match *self {
            Operation::Autocontrast => per_channel(x, autocontrast),
            Operation::Equalize => per_channel(x, equalize),
            Operation::Posterize { bits } => posterize(x, bits),
            Operation::Solarize { threshold } => x.map(|v| if v > threshold { 1.0 - v } else { v }),
            Operation::Rotate { degrees } => {
                let (sin, cos) = degrees.to_radians().sin_cos();
                warp(x, c, h, w, |px, py| {
                    let (dx, dy) = (px - cx, py - cy);
                    (cos * dx + sin * dy + cx, -sin * dx + cos * dy + cy)
                })
            }
            Operation::ShearX { factor } => warp(x, c, h, w, |px, py| (px + factor * (py - cy), py)),
            Operation::ShearY { factor } => warp(x, c, h, w, |px, py| (px, py + factor * (px - cx))),
            Operation::TranslateX { pixels } => warp(x, c, h, w, |px, py| (px - pixels, py)),
            Operation::TranslateY { pixels } => warp(x, c, h, w, |px, py| (px, py - pixels)),
        };
        out.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
    }
}

fn per_channel(x: &Tensor, f: fn(&[f32]) -> Vec<f32>) -> Tensor {
    let hw = x.shape()[1] * x.shape()[2];
    let data = x.data().chunks(hw).flat_map(f).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn autocontrast(plane: &[f32]) -> Vec<f32> {
    let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if hi - lo <= f32::EPSILON {
        return plane.to_vec();
    }
    let scale = 1.0 / (hi - lo);
    plane.iter().map(|&v| (v - lo) * scale).collect()
}

fn quantize(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Histogram equalization on 256 levels, following the PIL lookup-table rule.
fn equalize(plane: &[f32]) -> Vec<f32> {
    let mut hist = [0usize; 256];
    for &v in plane {
        hist[quantize(v)] += 1;
    }
    let last = hist.iter().rposition(|&h| h > 0).unwrap_or(0);
    let step = (plane.len() - hist[last]) / 255;
    if step == 0 {
        return plane.to_vec();
    }
    let mut lut = [0f32; 256];
    let mut acc = step / 2;
    for (i, &h) in hist.iter().enumerate() {
        lut[i] = (acc / step).min(255) as f32 / 255.0;
        acc += h;
    }
    plane.iter().map(|&v| lut[quantize(v)]).collect()
}

fn posterize(x: &Tensor, bits: u8) -> Tensor {
    if bits >= 8 {
        return x.clone();
    }
    let mask = !((1u16 << (8 - bits)) - 1) as u8;
    x.map(|v| (quantize(v) as u8 & mask) as f32 / 255.0)
}

/// Inverse-mapped bilinear resampling with zero fill.
fn warp(x: &Tensor, c: usize, h: usize, w: usize, src: impl Fn(f32, f32) -> (f32, f32)) -> Tensor {
    let hw = h * w;
    let mut out = vec![0.0f32; c * hw];
    let data = x.data();
    for py in 0..h {
        for px in 0..w {
            let (sx, sy) = src(px as f32, py as f32);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1, y0, fx * (1.0 - fy)),
                (x0, y0 + 1, (1.0 - fx) * fy),
                (x0 + 1, y0 + 1, fx * fy),
            ];
            for (tx, ty, wt) in taps {
                if wt == 0.0 || tx < 0 || ty < 0 || tx >= w as isize || ty >= h as isize {
                    continue;
                }
                let idx = ty as usize * w + tx as usize;
                for ch in 0..c {
                    out[ch * hw + py * w + px] += wt * data[ch * hw + idx];
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

fn check_image(x: &Tensor) -> Result<()> {
    if x.shape().len() != 3 {
        return Err(Error::Input(format!("image must be [C, H, W], got {:?}", x.shape())));
    }
    Ok(())
}

/// Applies one operator; output stays in `[0, 1]` with the input's shape.
pub fn apply_op(x: &Tensor, op: &AugOp) -> Result<Tensor> {
    check_image(x)?;
    let op = AugOp::new(op.kind, op.severity, op.negate)?;
    Ok(op.operation(x.shape()[1], x.shape()[2]).apply(x))
}

/// Applies parameterized transforms left to right.
pub fn apply_operations(x: &Tensor, ops: &[Operation]) -> Result<Tensor> {
    check_image(x)?;
    Ok(ops.iter().fold(x.clone(), |img, op| op.apply(&img)))
}

/// A sequence of one to three operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugChain {
    ops: Vec<AugOp>,
}

impl AugChain {
    pub fn new(ops: Vec<AugOp>) -> Result<Self> {
        if !(1..=3).contains(&ops.len()) {
            return Err(Error::Input(format!("chain length {} outside [1, 3]", ops.len())));
        }
        Ok(Self { ops })
    }

    pub fn ops(&self) -> &[AugOp] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

fn random_op(kind: OpKind, rng: &mut seed::Rng) -> AugOp {
    AugOp {
        kind,
        severity: rng.random_range(1..=10),
        negate: rng.random_bool(0.5),
    }
}

/// Chain number `index` of the stream `seed`: length, kinds and severities
/// are uniform.
pub fn sample_chain(seed: u64, index: u64) -> AugChain {
    let mut rng = seed::stream(seed, "chain", index);
    let len = rng.random_range(1..=3);
    let ops = (0..len)
        .map(|_| {
            let kind = REGISTRY[rng.random_range(0..REGISTRY.len())];
            random_op(kind, &mut rng)
        })
        .collect();
    AugChain { ops }
}

/// Chains `0..b` of the stream `seed`.
pub fn sample_chains(seed: u64, b: usize) -> Vec<AugChain> {
    (0..b as u64).map(|i| sample_chain(seed, i)).collect()
}

/// Same kinds and length as `chain` with fresh severities and directions.
pub fn resample_severities(chain: &AugChain, seed: u64, index: u64) -> AugChain {
    let mut rng = seed::stream(seed, "severity", index);
    AugChain {
        ops: chain.ops.iter().map(|op| random_op(op.kind, &mut rng)).collect(),
    }
}

/// Applies the chain's operators left to right.
pub fn apply_chain(x: &Tensor, chain: &AugChain) -> Result<Tensor> {
    chain.ops.iter().try_fold(x.clone(), |img, op| apply_op(&img, op))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
        let mut rng = seed::stream(seed, "img", 0);
        Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn severity_one_posterize_is_identity() {
        let x = random_image(1, 3, 8, 8);
        let op = AugOp::new(OpKind::Posterize, 1, false).unwrap();
        assert_eq!(op.operation(8, 8), Operation::Posterize { bits: 8 });
        assert_eq!(apply_op(&x, &op).unwrap(), x);
    }

    #[test]
    fn solarize_at_one_is_identity() {
        let x = random_image(2, 3, 8, 8);
        assert_eq!(Operation::Solarize { threshold: 1.0 }.apply(&x), x);
        assert_eq!(Operation::Solarize { threshold: 0.5 }.apply(&x).data()[0], {
            let v = x.data()[0];
            if v > 0.5 { 1.0 - v } else { v }
        });
    }

    #[test]
    fn severity_out_of_range_rejected() {
        assert!(AugOp::new(OpKind::Rotate, 0, false).is_err());
        assert!(AugOp::new(OpKind::Rotate, 11, false).is_err());
        let bad = AugOp { kind: OpKind::Rotate, severity: 12, negate: false };
        assert!(matches!(apply_op(&random_image(0, 1, 4, 4), &bad), Err(Error::Input(_))));
    }

    #[test]
    fn posterize_bit_map() {
        let bits: Vec<u8> = (1..=10)
            .map(|s| match AugOp::new(OpKind::Posterize, s, false).unwrap().operation(8, 8) {
                Operation::Posterize { bits } => bits,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(bits, vec![8, 7, 7, 6, 6, 5, 5, 4, 4, 4]);
    }

    #[test]
    fn rotate_roundtrip_inside_interior() {
        // Smooth blob with a zero border; bilinear resampling twice should
        // reproduce it inside the disc that never leaves the frame.
        let (h, w) = (32, 32);
        let mut data = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                    continue;
                }
                let (dx, dy) = (x as f32 - 15.5, y as f32 - 15.5);
                data[y * w + x] = (-(dx * dx + dy * dy) / 120.0).exp() * 0.9;
            }
        }
        let img = Tensor::new(vec![1, h, w], data).unwrap();
        for s in 1..=10u8 {
            let op = AugOp::new(OpKind::Rotate, s, false).unwrap();
            let inv = AugOp::new(OpKind::Rotate, s, true).unwrap();
            let back = apply_op(&apply_op(&img, &op).unwrap(), &inv).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = (x as f32 - 15.5, y as f32 - 15.5);
                    if (dx * dx + dy * dy).sqrt() < 12.0 {
                        let d = (back.data()[y * w + x] - img.data()[y * w + x]).abs();
                        assert!(d <= 2.0 / 255.0, "severity {s} pixel ({x},{y}) off by {d}");
                    }
                }
            }
        }
    }

    #[test]
    fn integer_translation_shifts_pixels() {
        let x = random_image(3, 1, 4, 4);
        let y = Operation::TranslateX { pixels: 1.0 }.apply(&x);
        for r in 0..4 {
            assert_eq!(y.data()[r * 4], 0.0);
            for c in 1..4 {
                assert_eq!(y.data()[r * 4 + c], x.data()[r * 4 + c - 1]);
            }
        }
    }

    #[test]
    fn constant_image_unchanged_by_histogram_ops() {
        let x = Tensor::full(&[3, 6, 6], 0.4);
        assert_eq!(Operation::Autocontrast.apply(&x), x);
        assert_eq!(Operation::Equalize.apply(&x), x);
    }

    #[test]
    fn chain_sampling_is_deterministic() {
        assert_eq!(sample_chain(9, 4), sample_chain(9, 4));
        assert_ne!(sample_chains(9, 3), sample_chains(10, 3));
    }

    #[test]
    fn chain_length_frequencies() {
        let mut counts = [0usize; 3];
        let mut kinds = [0usize; 9];
        let total = 10_000;
        for i in 0..total {
            let chain = sample_chain(123, i as u64);
            counts[chain.len() - 1] += 1;
            let op = chain.ops()[0];
            kinds[REGISTRY.iter().position(|&k| k == op.kind()).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / total as f64 - 1.0 / 3.0).abs() < 0.03, "{counts:?}");
        }
        for k in kinds {
            assert!((k as f64 / total as f64 - 1.0 / 9.0).abs() < 0.02, "{kinds:?}");
        }
    }

    #[test]
    fn chain_composition() {
        let x = random_image(5, 3, 8, 8);
        assert!(AugChain::new(vec![]).is_err());
        let op = AugOp::new(OpKind::ShearY, 4, true).unwrap();
        let single = AugChain::new(vec![op]).unwrap();
        assert_eq!(apply_chain(&x, &single).unwrap(), apply_op(&x, &op).unwrap());

        let ident = [Operation::Posterize { bits: 8 }, Operation::Solarize { threshold: 1.0 }];
        assert_eq!(apply_operations(&x, &ident).unwrap(), x);

        let chain = sample_chain(77, 2);
        let manual = chain.ops().iter().fold(x.clone(), |img, op| apply_op(&img, op).unwrap());
        assert_eq!(apply_chain(&x, &chain).unwrap(), manual);
    }

    proptest! {
        #[test]
        fn ops_preserve_range_and_shape(seed in any::<u64>(), kind in 0usize..9, severity in 1u8..=10, negate in any::<bool>()) {
            let x = random_image(seed, 3, 7, 9);
            let op = AugOp::new(REGISTRY[kind], severity, negate).unwrap();
            let y = apply_op(&x, &op).unwrap();
            prop_assert_eq!(y.shape(), x.shape());
            prop_assert!(y.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }
}

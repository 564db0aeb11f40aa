//! Corruption benchmark: nine corruption kinds at five severities, clean and
//! robust accuracy, and mean corruption error relative to a baseline.
//!
//! None of the corruptions shares a name with a training augmentation; the
//! suite refuses to build otherwise. RA averages each kind over its
//! severities first and then averages kinds with equal weight. mCE divides
//! each kind's summed error by the baseline's and averages the ratios over
//! kinds (×100).

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augops::REGISTRY;
use crate::data::{self, Dataset};
use crate::diffcore::Network;
use crate::error::{Error, Result};
use crate::model::predict;
use crate::normlayers::NormRoute;
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    BoxBlur,
    MotionBlurApprox,
    Contrast,
    Brightness,
    Pixelate,
    JpegLikeBlock,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 9] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::BoxBlur,
        CorruptionKind::MotionBlurApprox,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
        CorruptionKind::Pixelate,
        CorruptionKind::JpegLikeBlock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::BoxBlur => "box_blur",
            CorruptionKind::MotionBlurApprox => "motion_blur_approx",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::JpegLikeBlock => "jpeg_like_block",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name).ok_or_else(|| {
            let known: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::Input(format!("unknown corruption '{name}' (expected one of {})", known.join(", ")))
        })
    }

    /// The noise category, dropped by the additive-noise filter.
    pub fn is_noise(self) -> bool {
        matches!(
            self,
            CorruptionKind::GaussianNoise | CorruptionKind::ShotNoise | CorruptionKind::ImpulseNoise
        )
    }
}

/// Names a corruption may never use: every training augmentation.
pub fn deny_list() -> Vec<&'static str> {
    REGISTRY.iter().map(|k| k.name()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "all_kinds")]
    pub kinds: Vec<CorruptionKind>,
    #[serde(default = "all_severities")]
    pub severities: Vec<u8>,
    /// Drop the noise corruptions.
    #[serde(default)]
    pub exclude_additive_noise: bool,
    /// Root of the per-image corruption streams; set programmatically.
    #[serde(skip)]
    pub seed: u64,
}

fn all_kinds() -> Vec<CorruptionKind> {
    CorruptionKind::ALL.to_vec()
}

fn all_severities() -> Vec<u8> {
    vec![1, 2, 3, 4, 5]
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            kinds: all_kinds(),
            severities: all_severities(),
            exclude_additive_noise: false,
            seed: 0,
        }
    }
}

/// A validated list of (kind, severity) cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSuite {
    pub kinds: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
    pub seed: u64,
}

impl CorruptionSuite {
    pub fn new(cfg: &SuiteConfig) -> Result<Self> {
        let kinds: Vec<CorruptionKind> = cfg
            .kinds
            .iter()
            .copied()
            .filter(|k| !(cfg.exclude_additive_noise && k.is_noise()))
            .collect();
        if kinds.is_empty() {
            return Err(Error::Config("corruption suite has no kinds".into()));
        }
        if cfg.severities.is_empty() {
            return Err(Error::Config("corruption suite has no severities".into()));
        }
        if let Some(s) = cfg.severities.iter().find(|s| !(1..=5).contains(*s)) {
            return Err(Error::Config(format!("severity {s} outside [1, 5]")));
        }
        let deny = deny_list();
        for (i, k) in kinds.iter().enumerate() {
            if deny.contains(&k.name()) {
                return Err(Error::Config(format!("corruption '{}' overlaps a training augmentation", k.name())));
            }
            if kinds[..i].contains(k) {
                return Err(Error::Config(format!("corruption '{}' listed twice", k.name())));
            }
        }
        Ok(Self {
            kinds,
            severities: cfg.severities.clone(),
            seed: cfg.seed,
        })
    }

    /// Seed used to corrupt image `index` in cell `(kind, severity)`.
    pub fn image_seed(&self, kind: CorruptionKind, severity: u8, index: usize) -> u64 {
        let cell = seed::derive_seed(self.seed, kind.name(), severity as u64);
        seed::derive_seed(cell, "image", index as u64)
    }

    /// Every cell's corrupted copy of `images`.
    pub fn corrupt_set(&self, images: &Tensor, kind: CorruptionKind, severity: u8) -> Result<Tensor> {
        let out = (0..images.batch())
            .into_par_iter()
            .map(|i| corrupt(&images.item(i), kind, severity, self.image_seed(kind, severity, i)))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&out)
    }
}

fn dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Input(format!("corruptions expect one [C, H, W] image, got {s:?}"))),
    }
}

/// Corrupts one `[C, H, W]` image; deterministic in `(x, kind, severity, seed)`.
pub fn corrupt(x: &Tensor, kind: CorruptionKind, severity: u8, seed: u64) -> Result<Tensor> {
    if !(1..=5).contains(&severity) {
        return Err(Error::Input(format!("severity must be in [1, 5], got {severity}")));
    }
    let (c, h, w) = dims(x)?;
    let s = severity as usize - 1;
    let mut rng = seed::stream(seed, "corrupt", 0);
    let out = match kind {
        CorruptionKind::GaussianNoise => {
            let normal = Normal::new(0.0f32, 0.04 * severity as f32).expect("positive std");
            let mut out = x.clone();
            out.data_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            out
        }
        CorruptionKind::ShotNoise => {
            let rate = [60.0, 25.0, 12.0, 5.0, 3.0][s];
            let mut out = x.clone();
            for v in out.data_mut() {
                let lambda = (v.clamp(0.0, 1.0) as f64) * rate;
                let count = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(&mut rng)
                } else {
                    0.0
                };
                *v = (count / rate) as f32;
            }
            out
        }
        CorruptionKind::ImpulseNoise => {
            let amount = [0.03, 0.06, 0.09, 0.17, 0.27][s];
            let mut out = x.clone();
            for v in out.data_mut() {
                if rng.random::<f64>() < amount {
                    *v = if rng.random::<bool>() { 1.0 } else { 0.0 };
                }
            }
            out
        }
        CorruptionKind::BoxBlur => {
            let mut out = x.clone();
            for _ in 0..severity {
                out = blur(&out, c, h, w, 1, 1);
            }
            out
        }
        CorruptionKind::MotionBlurApprox => blur(x, c, h, w, severity as usize, 0),
        CorruptionKind::Contrast => {
            let factor = [0.4, 0.3, 0.2, 0.1, 0.05][s];
            let mut out = x.clone();
            for plane in out.data_mut().chunks_mut(h * w) {
                let mean = plane.iter().map(|&v| v as f64).sum::<f64>() as f32 / (h * w) as f32;
                plane.iter_mut().for_each(|v| *v = (*v - mean) * factor + mean);
            }
            out
        }
        CorruptionKind::Brightness => {
            let shift = [0.1, 0.2, 0.3, 0.4, 0.5][s];
            x.map(|v| v + shift)
        }
        CorruptionKind::Pixelate => {
            let q = [0.6, 0.5, 0.4, 0.3, 0.25][s];
            pixelate(x, c, h, w, q)
        }
        CorruptionKind::JpegLikeBlock => {
            let step = [0.03, 0.06, 0.1, 0.15, 0.25][s];
            block_quantize(x, c, h, w, step)
        }
    };
    Ok(out.map(|v| v.clamp(0.0, 1.0)))
}

/// Mean filter over a `(2rx+1) × (2ry+1)` window with edge clamping.
fn blur(x: &Tensor, c: usize, h: usize, w: usize, rx: usize, ry: usize) -> Tensor {
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    let count = ((2 * rx + 1) * (2 * ry + 1)) as f32;
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for dy in -(ry as isize)..=ry as isize {
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -(rx as isize)..=rx as isize {
                        let sx = (xx as isize + dx).clamp(0, w as isize - 1) as usize;
                        acc += plane[sy * w + sx];
                    }
                }
                out[(ch * h + y) * w + xx] = acc / count;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// Box-average down to `⌊q·H⌋ × ⌊q·W⌋` cells, then nearest-neighbor back up.
fn pixelate(x: &Tensor, c: usize, h: usize, w: usize, q: f32) -> Tensor {
    let (sh, sw) = (((h as f32 * q) as usize).max(1), ((w as f32 * q) as usize).max(1));
    let cell = |i: usize, n: usize, small: usize| i * small / n;
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let mut sums = vec![0.0f32; sh * sw];
        let mut counts = vec![0usize; sh * sw];
        for y in 0..h {
            for xx in 0..w {
                let k = cell(y, h, sh) * sw + cell(xx, w, sw);
                sums[k] += plane[y * w + xx];
                counts[k] += 1;
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let k = cell(y, h, sh) * sw + cell(xx, w, sw);
                out[(ch * h + y) * w + xx] = sums[k] / counts[k] as f32;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

const BLOCK: usize = 8;

fn dct_basis() -> [[f32; BLOCK]; BLOCK] {
    let mut b = [[0.0f32; BLOCK]; BLOCK];
    for (u, row) in b.iter_mut().enumerate() {
        let scale = if u == 0 { (1.0 / BLOCK as f32).sqrt() } else { (2.0 / BLOCK as f32).sqrt() };
        for (i, v) in row.iter_mut().enumerate() {
            *v = scale * ((2 * i + 1) as f32 * u as f32 * PI / (2 * BLOCK) as f32).cos();
        }
    }
    b
}

/// 8×8 orthonormal DCT per channel; coefficient `(u, v)` is rounded to a
/// multiple of `step·(1 + u + v)`. Blocks past the border are edge-padded.
fn block_quantize(x: &Tensor, c: usize, h: usize, w: usize, step: f32) -> Tensor {
    let basis = dct_basis();
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for by in (0..h).step_by(BLOCK) {
            for bx in (0..w).step_by(BLOCK) {
                let mut block = [[0.0f32; BLOCK]; BLOCK];
                for (i, row) in block.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = plane[(by + i).min(h - 1) * w + (bx + j).min(w - 1)];
                    }
                }
                let mut coef = [[0.0f32; BLOCK]; BLOCK];
                for u in 0..BLOCK {
                    for v in 0..BLOCK {
                        let mut acc = 0.0;
                        for i in 0..BLOCK {
                            for j in 0..BLOCK {
                                acc += basis[u][i] * basis[v][j] * block[i][j];
                            }
                        }
                        let q = step * (1 + u + v) as f32;
                        coef[u][v] = (acc / q).round() * q;
                    }
                }
                for i in 0..BLOCK.min(h - by) {
                    for j in 0..BLOCK.min(w - bx) {
                        let mut acc = 0.0;
                        for u in 0..BLOCK {
                            for v in 0..BLOCK {
                                acc += basis[u][i] * basis[v][j] * coef[u][v];
                            }
                        }
                        out[(ch * h + by + i) * w + bx + j] = acc;
                    }
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// Anything that labels a batch of images.
pub trait Classifier {
    fn classify(&self, images: &Tensor) -> Result<Vec<usize>>;
}

impl Classifier for Network {
    /// Clean-route eval-mode predictions.
    fn classify(&self, images: &Tensor) -> Result<Vec<usize>> {
        let indices: Vec<usize> = (0..images.batch()).collect();
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(256) {
            out.extend(predict(self, &images.select(chunk), NormRoute::Clean)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CorruptionKind,
    pub severity: u8,
    /// Accuracy in percent.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub sa: f64,
    pub cells: Vec<Cell>,
    pub ra: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mce: Option<f64>,
}

pub const CELLS_HEADER: &str = "kind,severity,accuracy";

impl RobustnessReport {
    /// Builds a report from per-cell accuracies, computing RA.
    pub fn from_cells(sa: f64, cells: Vec<Cell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Input("robustness report needs at least one cell".into()));
        }
        let ra = robust_accuracy(&cells);
        Ok(Self { sa, cells, ra, mce: None })
    }

    /// Mean accuracy of each kind over its severities.
    pub fn per_kind(&self) -> BTreeMap<CorruptionKind, f64> {
        per_kind(&self.cells)
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from(CELLS_HEADER);
        out.push('\n');
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{}", c.kind.name(), c.severity, c.accuracy);
        }
        out
    }

    /// Writes `report.json` and `cells.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("cells.csv");
        fs::write(&csv, self.cells_csv()).map_err(|e| Error::io(&csv, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(path, format!("invalid robustness report: {e}")))
    }
}

fn per_kind(cells: &[Cell]) -> BTreeMap<CorruptionKind, f64> {
    let mut groups: BTreeMap<CorruptionKind, Vec<f64>> = BTreeMap::new();
    for c in cells {
        groups.entry(c.kind).or_default().push(c.accuracy);
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

fn robust_accuracy(cells: &[Cell]) -> f64 {
    let kinds = per_kind(cells);
    kinds.values().sum::<f64>() / kinds.len() as f64
}

fn accuracy(model: &dyn Classifier, images: &Tensor, labels: &[usize]) -> Result<f64> {
    let preds = model.classify(images)?;
    if preds.len() != labels.len() {
        return Err(Error::Input(format!("classifier returned {} labels for {} images", preds.len(), labels.len())));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

/// SA on `test`, accuracy on every cell of `suite`, and RA.
pub fn evaluate(model: &dyn Classifier, test: &Dataset, suite: &CorruptionSuite) -> Result<RobustnessReport> {
    if test.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty test set".into()));
    }
    let sa = accuracy(model, &test.images, &test.labels)?;
    let mut cells = Vec::with_capacity(suite.kinds.len() * suite.severities.len());
    for &kind in &suite.kinds {
        for &severity in &suite.severities {
            let corrupted = suite.corrupt_set(&test.images, kind, severity)?;
            cells.push(Cell {
                kind,
                severity,
                accuracy: accuracy(model, &corrupted, &test.labels)?,
            });
        }
    }
    RobustnessReport::from_cells(sa, cells)
}

/// Mean corruption error (%) of `target` normalized by `baseline`.
pub fn mce(target: &RobustnessReport, baseline: &RobustnessReport) -> Result<f64> {
    let key = |c: &Cell| (c.kind, c.severity);
    let mut t: Vec<_> = target.cells.iter().map(key).collect();
    let mut b: Vec<_> = baseline.cells.iter().map(key).collect();
    t.sort();
    b.sort();
    if t != b {
        return Err(Error::Input("target and baseline reports cover different corruption cells".into()));
    }
    let mut errors: BTreeMap<CorruptionKind, (f64, f64)> = BTreeMap::new();
    for c in &target.cells {
        errors.entry(c.kind).or_default().0 += 100.0 - c.accuracy;
    }
    for c in &baseline.cells {
        errors.entry(c.kind).or_default().1 += 100.0 - c.accuracy;
    }
    let mut total = 0.0;
    for (kind, (te, be)) in &errors {
        if *be <= 0.0 {
            return Err(Error::Input(format!(
                "baseline makes no errors on '{}', corruption error undefined",
                kind.name()
            )));
        }
        total += te / be;
    }
    Ok(100.0 * total / errors.len() as f64)
}

/// Writes every corrupted copy of `test` as `<kind>_s<severity>.axd` (with
/// manifests) into `dir`, plus `suite.json`. Returns the container paths.
pub fn materialize(test: &Dataset, suite: &CorruptionSuite, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join("suite.json");
    let text = serde_json::to_string_pretty(suite).expect("suite serializes");
    fs::write(&manifest, text + "\n").map_err(|e| Error::io(&manifest, e))?;
    let mut paths = Vec::new();
    for &kind in &suite.kinds {
        for &severity in &suite.severities {
            let images = suite.corrupt_set(&test.images, kind, severity)?;
            let ds = Dataset::new(images, test.labels.clone(), test.classes)?;
            let path = dir.join(format!("{}_s{severity}.axd", kind.name()));
            data::save(&ds, &path, &[], &format!("{} severity {severity}", kind.name()))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::new(
            vec![c, h, w],
            (0..c * h * w).map(|i| 0.1 + 0.8 * ((i * 37) % 101) as f32 / 100.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn names_are_disjoint_from_training_ops() {
        let deny = deny_list();
        assert_eq!(deny.len(), 9);
        for k in CorruptionKind::ALL {
            assert!(!deny.contains(&k.name()));
            assert_eq!(CorruptionKind::parse(k.name()).unwrap(), k);
        }
        assert!(CorruptionKind::parse("fog").is_err());
    }

    #[test]
    fn every_kind_is_deterministic_bounded_and_non_identity() {
        let x = ramp(3, 16, 16);
        for kind in CorruptionKind::ALL {
            for s in 1..=5 {
                let a = corrupt(&x, kind, s, 7).unwrap();
                assert_eq!(a, corrupt(&x, kind, s, 7).unwrap());
                assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(a.max_abs_diff(&x) > 0.0, "{kind:?} severity {s}");
            }
        }
    }

    #[test]
    fn severity_range_enforced() {
        let x = ramp(3, 8, 8);
        assert!(corrupt(&x, CorruptionKind::Contrast, 0, 0).is_err());
        assert!(corrupt(&x, CorruptionKind::Contrast, 6, 0).is_err());
    }

    #[test]
    fn gaussian_noise_std() {
        let x = Tensor::full(&[1, 100, 1000], 0.5);
        for s in [1u8, 3] {
            let y = corrupt(&x, CorruptionKind::GaussianNoise, s, 11).unwrap();
            let n = y.len() as f64;
            let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = y.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let nominal = 0.04 * s as f64;
            assert!((var.sqrt() / nominal - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn suite_validation_and_noise_filter() {
        let suite = CorruptionSuite::new(&SuiteConfig { exclude_additive_noise: true, ..Default::default() }).unwrap();
        assert_eq!(suite.kinds.len(), 6);
        assert!(suite.kinds.iter().all(|k| !k.is_noise()));
        assert!(CorruptionSuite::new(&SuiteConfig { severities: vec![0], ..Default::default() }).is_err());
        let dup = SuiteConfig {
            kinds: vec![CorruptionKind::Contrast, CorruptionKind::Contrast],
            ..Default::default()
        };
        assert!(CorruptionSuite::new(&dup).is_err());
    }

    fn report(acc: impl Fn(usize, u8) -> f64) -> RobustnessReport {
        let cells = CorruptionKind::ALL
            .iter()
            .enumerate()
            .flat_map(|(i, &kind)| (1..=5).map(move |s| (i, kind, s)))
            .map(|(i, kind, severity)| Cell { kind, severity, accuracy: acc(i, severity) })
            .collect();
        RobustnessReport::from_cells(90.0, cells).unwrap()
    }

    #[test]
    fn mce_self_normalizes_and_scales() {
        let base = report(|i, s| 80.0 - 5.0 * s as f64 - i as f64);
        assert_eq!(mce(&base, &base).unwrap(), 100.0);
        let half = report(|i, s| 100.0 - (20.0 + 5.0 * s as f64 + i as f64) / 2.0);
        assert!((mce(&half, &base).unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn mce_rejects_error_free_baseline() {
        let perfect = report(|_, _| 100.0);
        let err = mce(&perfect, &perfect).unwrap_err();
        assert!(err.to_string().contains("gaussian_noise"));
    }

    struct Leaky(Vec<usize>);

    impl Classifier for Leaky {
        fn classify(&self, images: &Tensor) -> Result<Vec<usize>> {
            Ok(self.0[..images.batch()].to_vec())
        }
    }

    #[test]
    fn perfect_and_constant_classifiers() {
        let labels: Vec<usize> = (0..20).map(|i| i % 10).collect();
        let images = Tensor::stack(&(0..20).map(|_| ramp(3, 8, 8)).collect::<Vec<_>>()).unwrap();
        let test = Dataset::new(images, labels.clone(), 10).unwrap();
        let suite = CorruptionSuite::new(&SuiteConfig { severities: vec![1, 5], ..Default::default() }).unwrap();
        let r = evaluate(&Leaky(labels), &test, &suite).unwrap();
        assert_eq!((r.sa, r.ra), (100.0, 100.0));
        let r = evaluate(&Leaky(vec![3; 20]), &test, &suite).unwrap();
        assert_eq!((r.sa, r.ra), (10.0, 10.0));
    }
}

//! Datasets: the AXD1 container, its JSON manifest, and the procedural toyset.
//!
//! AXD1 layout (little-endian):
//!
//! ```text
//! "AXD1" | u32 count | u32 H | u32 W | u32 C
//! count × H·W·C bytes, each image row-major H, W, C
//! count × u16 labels
//! ```
//!
//! so a file is exactly `20 + count·H·W·C + 2·count` bytes. The class count
//! lives in a companion manifest next to the container (`train.axd` →
//! `train.json`).

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AXD1";
const HEADER: usize = 20;

/// Images in `[0, 1]` stored as `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Input(format!("dataset images must be [N, C, H, W], got {:?}", images.shape())));
        }
        if images.batch() != labels.len() {
            return Err(Error::Input(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> Tensor {
        self.images.item(i)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// The first `count` samples of each class, in order of appearance.
    pub fn take_per_class(&self, count: usize) -> Dataset {
        let mut seen = vec![0; self.classes];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let l = self.labels[i];
                seen[l] += 1;
                seen[l] <= count
            })
            .collect();
        self.subset(&keep)
    }
}

/// Companion manifest of an AXD1 container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: usize,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub description: String,
}

pub fn manifest_path(container: &Path) -> PathBuf {
    container.with_extension("json")
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Serializes images and labels to AXD1 bytes.
pub fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    let [c, h, w] = ds.image_shape();
    if ds.classes > u16::MAX as usize + 1 {
        return Err(Error::Input(format!("{} classes do not fit u16 labels", ds.classes)));
    }
    let mut out = Vec::with_capacity(HEADER + ds.len() * (c * h * w + 2));
    out.extend_from_slice(MAGIC);
    for v in [ds.len(), h, w, c] {
        let v = u32::try_from(v).map_err(|_| Error::Input(format!("dimension {v} does not fit u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..ds.len() {
        let img = ds.images.row(i);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out.push(quantize(img[(ch * h + y) * w + x]));
                }
            }
        }
    }
    for &l in &ds.labels {
        out.extend_from_slice(&(l as u16).to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
}

/// Parses AXD1 bytes; `classes` bounds the labels.
pub fn decode(bytes: &[u8], classes: usize, path: &Path) -> Result<Dataset> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(Error::data(path, "not an AXD1 dataset (bad magic bytes)"));
    }
    let (count, h, w, c) = (u32_at(bytes, 4), u32_at(bytes, 8), u32_at(bytes, 12), u32_at(bytes, 16));
    let pixels = h * w * c;
    let expected = HEADER as u128 + count as u128 * pixels as u128 + 2 * count as u128;
    if bytes.len() as u128 != expected {
        return Err(Error::data(
            path,
            format!("size {} bytes does not match header (count {count}, {h}x{w}x{c}): expected {expected}", bytes.len()),
        ));
    }
    if count == 0 || pixels == 0 {
        return Err(Error::data(path, "dataset is empty"));
    }
    let payload = &bytes[HEADER..HEADER + count * pixels];
    let mut data = vec![0.0f32; count * pixels];
    for i in 0..count {
        let src = &payload[i * pixels..(i + 1) * pixels];
        let dst = &mut data[i * pixels..(i + 1) * pixels];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    dst[(ch * h + y) * w + x] = src[(y * w + x) * c + ch] as f32 / 255.0;
                }
            }
        }
    }
    let labels: Vec<usize> = bytes[HEADER + count * pixels..]
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
        .collect();
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::data(path, format!("label {l} of sample {i} exceeds class count {classes}")));
    }
    let images = Tensor::new(vec![count, c, h, w], data).map_err(|e| Error::data(path, e.to_string()))?;
    Dataset::new(images, labels, classes).map_err(|e| Error::data(path, e.to_string()))
}

/// Writes the container and its manifest.
pub fn save(ds: &Dataset, path: &Path, class_names: &[String], description: &str) -> Result<()> {
    let bytes = encode(ds)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let [c, h, w] = ds.image_shape();
    let manifest = Manifest {
        classes: ds.classes,
        count: ds.len(),
        height: h,
        width: w,
        channels: c,
        class_names: class_names.to_vec(),
        description: description.to_string(),
    };
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))
}

pub fn load_manifest(container: &Path) -> Result<Manifest> {
    let mpath = manifest_path(container);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(&mpath, format!("invalid manifest: {e}")))
}

/// Loads a container, checking it against its manifest.
pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(MAGIC) {
        return Err(Error::data(path, "not an AXD1 dataset (bad magic bytes)"));
    }
    let manifest = load_manifest(path)?;
    let ds = decode(&bytes, manifest.classes, path)?;
    let [c, h, w] = ds.image_shape();
    if (ds.len(), h, w, c) != (manifest.count, manifest.height, manifest.width, manifest.channels) {
        return Err(Error::data(path, "container header disagrees with its manifest"));
    }
    Ok(ds)
}

/// Procedural shapes dataset; class = shape × stroke pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToysetConfig {
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Training images per class.
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    /// Test images per class; defaults to `per_class / 5`.
    #[serde(default)]
    pub test_per_class: Option<usize>,
    #[serde(default = "default_size")]
    pub size: usize,
}

fn default_classes() -> usize {
    10
}

fn default_per_class() -> usize {
    500
}

fn default_size() -> usize {
    32
}

impl Default for ToysetConfig {
    fn default() -> Self {
        Self {
            classes: default_classes(),
            per_class: default_per_class(),
            test_per_class: None,
            size: default_size(),
        }
    }
}

const SHAPES: [&str; 5] = ["circle", "square", "triangle", "cross", "diamond"];
const PATTERNS: [&str; 3] = ["filled", "outline", "striped"];

/// Largest supported class count.
pub const MAX_TOY_CLASSES: usize = SHAPES.len() * PATTERNS.len();

impl ToysetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_TOY_CLASSES).contains(&self.classes) {
            return Err(Error::Config(format!(
                "toyset classes must be in [2, {MAX_TOY_CLASSES}], got {}",
                self.classes
            )));
        }
        if self.per_class == 0 || self.test_per_class == Some(0) {
            return Err(Error::Config("toyset needs at least one image per class".into()));
        }
        if self.size < 8 {
            return Err(Error::Config(format!("toyset image size must be at least 8, got {}", self.size)));
        }
        Ok(())
    }

    pub fn test_count(&self) -> usize {
        self.test_per_class.unwrap_or((self.per_class / 5).max(1))
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes)
            .map(|c| format!("{}-{}", SHAPES[c % SHAPES.len()], PATTERNS[c / SHAPES.len()]))
            .collect()
    }
}

/// Signed distance (in shape-radius units) to the outline of a unit shape.
fn shape_distance(shape: usize, u: f32, v: f32) -> f32 {
    match shape {
        0 => (u * u + v * v).sqrt() - 1.0,
        1 => u.abs().max(v.abs()) - 0.8,
        2 => (v - 0.5).max((3f32.sqrt() * u.abs() - v) / 2.0 - 0.5),
        3 => ((u.abs() - 0.3).max(v.abs() - 0.9)).min((u.abs() - 0.9).max(v.abs() - 0.3)),
        _ => u.abs() + v.abs() - 1.0,
    }
}

fn luminance(c: &[f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Renders one `[3, size, size]` image of class `class`.
pub fn render(class: usize, size: usize, rng: &mut seed::Rng) -> Tensor {
    let shape = class % SHAPES.len();
    let pattern = class / SHAPES.len();
    let s = size as f32;
    let radius = rng.random_range(0.22 * s..0.36 * s);
    let margin = radius * 0.95;
    let cx = rng.random_range(margin..s - margin);
    let cy = rng.random_range(margin..s - margin);
    let angle = rng.random_range(-0.17f32..0.17);
    let (sin, cos) = angle.sin_cos();
    let background: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let gradient = [rng.random_range(-0.15f32..0.15), rng.random_range(-0.15f32..0.15)];
    let mut foreground: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    while (luminance(&foreground) - luminance(&background)).abs() < 0.3 {
        foreground = [rng.random(), rng.random(), rng.random()];
    }
    let stripe_phase = rng.random_range(0.0f32..4.0);

    let mut data = vec![0.0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            let u = (cos * px + sin * py) / radius;
            let v = (-sin * px + cos * py) / radius;
            let d = shape_distance(shape, u, v) * radius;
            let fill = (0.5 - d).clamp(0.0, 1.0);
            let alpha = match pattern {
                0 => fill,
                1 => (0.5 - (d.abs() - 1.0)).clamp(0.0, 1.0),
                _ => {
                    let band = (py + stripe_phase).rem_euclid(4.0) < 2.0;
                    if band {
                        fill
                    } else {
                        0.0
                    }
                }
            };
            let shade = gradient[0] * (x as f32 / s - 0.5) + gradient[1] * (y as f32 / s - 0.5);
            for ch in 0..3 {
                let noise = rng.random_range(-0.03f32..0.03);
                let bg = background[ch] + shade + noise;
                data[(ch * size + y) * size + x] = (bg * (1.0 - alpha) + foreground[ch] * alpha).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, size, size], data).expect("shape matches")
}

fn render_split(cfg: &ToysetConfig, per_class: usize, split_seed: u64) -> Dataset {
    let count = per_class * cfg.classes;
    let mut data = Vec::with_capacity(count * 3 * cfg.size * cfg.size);
    let mut labels = Vec::with_capacity(count);
    for j in 0..count {
        let class = j % cfg.classes;
        let img = render(class, cfg.size, &mut seed::stream(split_seed, "render", j as u64));
        data.extend(img.into_data());
        labels.push(class);
    }
    let images = Tensor::new(vec![count, 3, cfg.size, cfg.size], data).expect("shape matches");
    Dataset::new(images, labels, cfg.classes).expect("labels in range")
}

/// Renders `(train, test)` with independent per-split seeds. Images are
/// quantized to 8 bits so they match what a saved container reloads as.
pub fn gen_toyset(cfg: &ToysetConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let quantized = |ds: Dataset| Dataset {
        images: ds.images.map(|v| quantize(v) as f32 / 255.0),
        ..ds
    };
    let train = render_split(cfg, cfg.per_class, seed::derive_seed(seed, "toyset-train", 0));
    let test = render_split(cfg, cfg.test_count(), seed::derive_seed(seed, "toyset-test", 0));
    Ok((quantized(train), quantized(test)))
}

/// Renders the toyset and writes `train.axd` / `test.axd` (plus manifests)
/// into `dir`. Returns the two container paths.
pub fn write_toyset(cfg: &ToysetConfig, seed: u64, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = gen_toyset(cfg, seed)?;
    let names = cfg.class_names();
    let train_path = dir.join("train.axd");
    let test_path = dir.join("test.axd");
    save(&train, &train_path, &names, &format!("toyset train split, seed {seed}"))?;
    save(&test, &test_path, &names, &format!("toyset test split, seed {seed}"))?;
    Ok((train_path, test_path))
}

//! Datasets as 8-bit pixel stores with one or more secret-label streams.
//!
//! Pixels stay `u8` in memory and are normalized by 255 when a batch is
//! materialized. Each secret stream is a class index per image; eavesdroppers
//! select a stream by its `secret_id`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{ImageBatch, ImageShape};
use crate::error::{Error, Result};
use jscc_tensor::Scalar;

/// Upper bound on an inverse-frequency class weight.
pub const CLASS_WEIGHT_CAP: f64 = 20.0;
pub const CIFAR_SECRET: &str = "class";
pub const CIFAR_CLASSES: usize = 10;
const CIFAR_RECORD: usize = 1 + 32 * 32 * 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SecretLabel {
    pub class_index: usize,
    pub num_classes: usize,
}

impl SecretLabel {
    pub fn new(class_index: usize, num_classes: usize) -> Result<Self> {
        if class_index >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class {class_index} out of range for L = {num_classes}"
            )));
        }
        Ok(Self {
            class_index,
            num_classes,
        })
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[self.class_index] = 1.0;
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecretSource {
    ClassLabel,
    AttributePair,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecretMapping {
    pub secret_id: String,
    pub source: SecretSource,
    #[serde(default)]
    pub attributes: Option<(String, String)>,
    pub num_classes: usize,
}

impl SecretMapping {
    pub fn attribute_pair(secret_id: &str, a: &str, b: &str) -> Self {
        Self {
            secret_id: secret_id.into(),
            source: SecretSource::AttributePair,
            attributes: Some((a.into(), b.into())),
            num_classes: 4,
        }
    }

    pub fn class_label(secret_id: &str, num_classes: usize) -> Self {
        Self {
            secret_id: secret_id.into(),
            source: SecretSource::ClassLabel,
            attributes: None,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let key = format!("dataset.mappings[{}]", self.secret_id);
        match (self.source, &self.attributes) {
            (SecretSource::AttributePair, Some(_)) if self.num_classes == 4 => Ok(()),
            (SecretSource::AttributePair, Some(_)) => Err(Error::config(key, "attribute pairs have exactly 4 classes")),
            (SecretSource::AttributePair, None) => Err(Error::config(key, "attribute pair mapping without attributes")),
            (SecretSource::ClassLabel, _) if self.num_classes >= 2 => Ok(()),
            (SecretSource::ClassLabel, _) => Err(Error::config(key, "need at least two classes")),
        }
    }
}

/// Per-eavesdropper CelebA attribute pairs, eavesdroppers 1 to 6.
pub fn celeba_attribute_pairs() -> Vec<SecretMapping> {
    [
        ("eve1", "Wavy_Hair", "Black_Hair"),
        ("eve2", "Wearing_Lipstick", "Smiling"),
        ("eve3", "Double_Chin", "Wearing_Necklace"),
        ("eve4", "No_Beard", "5_o_Clock_Shadow"),
        ("eve5", "Bags_Under_Eyes", "Arched_Eyebrows"),
        ("eve6", "High_Cheekbones", "Pointy_Nose"),
    ]
    .iter()
    .map(|(id, a, b)| SecretMapping::attribute_pair(id, a, b))
    .collect()
}

/// Resolves a named mapping preset.
pub fn mapping_preset(name: &str) -> Result<Vec<SecretMapping>> {
    match name {
        "celeba-pairs" => Ok(celeba_attribute_pairs()),
        "cifar10" => Ok(vec![SecretMapping::class_label(CIFAR_SECRET, CIFAR_CLASSES)]),
        other => Err(Error::config(
            "dataset.mappings",
            format!("unknown preset `{other}` (known: celeba-pairs, cifar10)"),
        )),
    }
}

/// `2a + b` for binary attributes.
pub fn attribute_pair_to_class(a: u8, b: u8) -> Result<usize> {
    if a > 1 || b > 1 {
        return Err(Error::InvalidArgument(format!(
            "attribute bits must be 0 or 1, got ({a}, {b})"
        )));
    }
    Ok(2 * a as usize + b as usize)
}

/// Inverse-frequency weights `N / (L n_l)`, so the per-sample mean weight is
/// one. Classes with no samples, or whose weight would exceed the cap, get
/// [`CLASS_WEIGHT_CAP`].
pub fn class_weights(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("class weights need at least one label".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for L = {num_classes}"
            )));
        }
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| {
            if c == 0 {
                CLASS_WEIGHT_CAP
            } else {
                (n / (num_classes as f64 * c as f64)).min(CLASS_WEIGHT_CAP)
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub shape: ImageShape,
    pixels: Vec<u8>,
    secret_ids: Vec<String>,
    num_classes: Vec<usize>,
    /// `labels[s][i]`: class of image `i` under secret stream `s`.
    labels: Vec<Vec<usize>>,
    /// Index of each image in its source collection.
    source_index: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        shape: ImageShape,
        pixels: Vec<u8>,
        secrets: Vec<(String, usize, Vec<usize>)>,
    ) -> Result<Self> {
        let n = pixels.len() / shape.numel().max(1);
        if shape.numel() == 0 || pixels.len() != n * shape.numel() {
            return Err(Error::Shape(format!(
                "{} bytes is not a whole number of {shape:?} images",
                pixels.len()
            )));
        }
        let mut secret_ids = Vec::new();
        let mut num_classes = Vec::new();
        let mut labels = Vec::new();
        for (id, l, ls) in secrets {
            if ls.len() != n || ls.iter().any(|&c| c >= l) {
                return Err(Error::InvalidArgument(format!(
                    "secret `{id}` needs {n} labels in [0, {l})"
                )));
            }
            secret_ids.push(id);
            num_classes.push(l);
            labels.push(ls);
        }
        Ok(Self {
            name: name.into(),
            shape,
            pixels,
            secret_ids,
            num_classes,
            labels,
            source_index: (0..n).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.source_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_index.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.shape.numel();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    pub fn secret_ids(&self) -> &[String] {
        &self.secret_ids
    }

    pub fn secret_position(&self, secret_id: &str) -> Result<usize> {
        self.secret_ids.iter().position(|s| s == secret_id).ok_or_else(|| {
            Error::config(
                "roster.secret_id",
                format!(
                    "dataset `{}` has no secret `{secret_id}` (available: {:?})",
                    self.name, self.secret_ids
                ),
            )
        })
    }

    pub fn num_classes(&self, secret: usize) -> usize {
        self.num_classes[secret]
    }

    pub fn labels(&self, secret: usize) -> &[usize] {
        &self.labels[secret]
    }

    pub fn label(&self, secret: usize, i: usize) -> SecretLabel {
        SecretLabel {
            class_index: self.labels[secret][i],
            num_classes: self.num_classes[secret],
        }
    }

    /// Normalized batch of the given images, in order.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Result<ImageBatch<S>> {
        let mut raw = Vec::with_capacity(indices.len() * self.shape.numel());
        for &i in indices {
            raw.extend_from_slice(self.image(i));
        }
        ImageBatch::from_u8(self.shape, indices.len(), &raw)
    }

    pub fn batch_labels(&self, secret: usize, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[secret][i]).collect()
    }

    /// Copy restricted to `indices`, preserving source indices.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.shape.numel());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Self {
            name: self.name.clone(),
            shape: self.shape,
            pixels,
            secret_ids: self.secret_ids.clone(),
            num_classes: self.num_classes.clone(),
            labels: self
                .labels
                .iter()
                .map(|ls| indices.iter().map(|&i| ls[i]).collect())
                .collect(),
            source_index: indices.iter().map(|&i| self.source_index[i]).collect(),
        }
    }

    /// First `n` images (or all of them).
    pub fn truncate(&self, n: usize) -> Self {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }
}

/// A seeded permutation of `0..n`.
pub fn epoch_order<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Consecutive batches of `order`; the last one may be short.
pub fn batches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size.max(1))
}

fn ingest(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ingest(path, e.to_string()))
}

/// CIFAR-10 binary version. `root` may be the extracted
/// `cifar-10-batches-bin` directory or its parent.
pub fn load_cifar10(root: &Path, split: Split) -> Result<Dataset> {
    let nested = root.join("cifar-10-batches-bin");
    let dir = if nested.is_dir() { nested } else { root.to_path_buf() };
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (f, file) in files.iter().enumerate() {
        let bytes = read(file)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(ingest(
                file,
                format!("size {} is not a multiple of {CIFAR_RECORD}-byte records", bytes.len()),
            ));
        }
        for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            let label = rec[0] as usize;
            if label >= CIFAR_CLASSES {
                return Err(ingest(file, format!("record {r} has label {label}")));
            }
            labels.push(label);
            // Planar RGB to interleaved.
            let planes = &rec[1..];
            for p in 0..1024 {
                pixels.extend_from_slice(&[planes[p], planes[1024 + p], planes[2048 + p]]);
            }
        }
        log::debug!(
            "read {} images from {} (file {f})",
            bytes.len() / CIFAR_RECORD,
            file.display()
        );
    }
    let mut ds = Dataset::new(
        format!("cifar10-{split}"),
        ImageShape::CIFAR,
        pixels,
        vec![(CIFAR_SECRET.into(), CIFAR_CLASSES, labels)],
    )?;
    if split == Split::Test {
        // Offsets keep source indices disjoint from the training split.
        ds.source_index.iter_mut().for_each(|i| *i += 50_000);
    }
    Ok(ds)
}

/// CelebA aligned images. `root` holds `list_attr_celeba.txt`,
/// `list_eval_partition.txt` and `img_align_celeba/`. Images are
/// center-cropped to a square and resized to `resolution`. The validation
/// partition is not used. `limit` caps the number of images read.
pub fn load_celeba(
    root: &Path,
    split: Split,
    mappings: &[SecretMapping],
    resolution: usize,
    limit: Option<usize>,
) -> Result<Dataset> {
    for m in mappings {
        m.validate()?;
    }
    let attr_path = root.join("list_attr_celeba.txt");
    let attr_text = String::from_utf8(read(&attr_path)?).map_err(|e| ingest(&attr_path, e.to_string()))?;
    let mut lines = attr_text.lines();
    lines.next();
    let names: Vec<&str> = lines
        .next()
        .ok_or_else(|| ingest(&attr_path, "missing attribute header"))?
        .split_whitespace()
        .collect();
    let mut columns = Vec::new();
    for m in mappings {
        let cols = match (&m.source, &m.attributes) {
            (SecretSource::AttributePair, Some((a, b))) => {
                let find = |name: &str| {
                    names.iter().position(|n| *n == name).ok_or_else(|| {
                        let known: Vec<String> = celeba_attribute_pairs()
                            .into_iter()
                            .filter_map(|m| m.attributes)
                            .flat_map(|(a, b)| [a, b])
                            .collect();
                        Error::config(
                            format!("dataset.mappings[{}]", m.secret_id),
                            format!("unknown attribute `{name}`; preset attributes: {}", known.join(", ")),
                        )
                    })
                };
                (find(a)?, find(b)?)
            }
            _ => {
                return Err(Error::config(
                    format!("dataset.mappings[{}]", m.secret_id),
                    "CelebA secrets must be attribute pairs",
                ))
            }
        };
        columns.push(cols);
    }
    let part_path = root.join("list_eval_partition.txt");
    let part_text = String::from_utf8(read(&part_path)?).map_err(|e| ingest(&part_path, e.to_string()))?;
    let wanted = match split {
        Split::Train => "0",
        Split::Test => "2",
    };
    let chosen: std::collections::HashSet<&str> = part_text
        .lines()
        .filter_map(|l| {
            let mut it = l.split_whitespace();
            match (it.next(), it.next()) {
                (Some(f), Some(p)) if p == wanted => Some(f),
                _ => None,
            }
        })
        .collect();
    let shape = ImageShape {
        height: resolution,
        width: resolution,
        channels: 3,
    };
    let mut pixels = Vec::new();
    let mut labels = vec![Vec::new(); mappings.len()];
    let mut source = Vec::new();
    for (row, line) in lines.enumerate() {
        if limit.is_some_and(|l| source.len() >= l) {
            break;
        }
        let mut fields = line.split_whitespace();
        let Some(file) = fields.next() else { continue };
        if !chosen.contains(file) {
            continue;
        }
        let values: Vec<&str> = fields.collect();
        if values.len() != names.len() {
            return Err(ingest(
                &attr_path,
                format!("row {row} has {} attributes, expected {}", values.len(), names.len()),
            ));
        }
        let bit = |c: usize| -> Result<u8> {
            match values[c] {
                "1" => Ok(1),
                "-1" | "0" => Ok(0),
                v => Err(ingest(&attr_path, format!("row {row}: attribute value `{v}`"))),
            }
        };
        for (s, &(a, b)) in columns.iter().enumerate() {
            labels[s].push(attribute_pair_to_class(bit(a)?, bit(b)?)?);
        }
        let img_path = root.join("img_align_celeba").join(file);
        let img = image::open(&img_path)
            .map_err(|e| ingest(&img_path, e.to_string()))?
            .to_rgb8();
        let side = img.width().min(img.height());
        let x0 = (img.width() - side) / 2;
        let y0 = (img.height() - side) / 2;
        let crop = image::imageops::crop_imm(&img, x0, y0, side, side).to_image();
        let resized = image::imageops::resize(
            &crop,
            resolution as u32,
            resolution as u32,
            image::imageops::FilterType::Triangle,
        );
        pixels.extend_from_slice(resized.as_raw());
        source.push(row);
    }
    let secrets = mappings
        .iter()
        .zip(labels)
        .map(|(m, ls)| (m.secret_id.clone(), m.num_classes, ls))
        .collect();
    let mut ds = Dataset::new(format!("celeba-{split}"), shape, pixels, secrets)?;
    ds.source_index = source;
    Ok(ds)
}

/// Deterministic images whose class is planted as a class-specific
/// low-frequency pattern over a random smooth background and pixel noise.
/// The secret stream is named [`CIFAR_SECRET`].
pub fn synthetic_dataset(
    n_images: usize,
    height: usize,
    width: usize,
    channels: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    synthetic_styled(
        n_images,
        ImageShape {
            height,
            width,
            channels,
        },
        num_classes,
        seed,
        SyntheticStyle::default(),
    )
}

/// Knobs of the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticStyle {
    /// Amplitude of the class pattern.
    pub signal: f64,
    /// Amplitude of the per-image smooth background.
    pub background: f64,
    /// Standard deviation of per-pixel noise.
    pub noise: f64,
}

impl Default for SyntheticStyle {
    fn default() -> Self {
        Self {
            signal: 0.12,
            background: 0.25,
            noise: 0.03,
        }
    }
}

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: [f64; 3],
}

impl Wave {
    fn random<R: Rng>(rng: &mut R, max_freq: f64) -> Self {
        Self {
            fy: rng.random_range(0.5..max_freq),
            fx: rng.random_range(0.5..max_freq),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            amp: [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ],
        }
    }

    fn at(&self, y: f64, x: f64, ch: usize) -> f64 {
        self.amp[ch % 3] * (std::f64::consts::TAU * (self.fy * y + self.fx * x) + self.phase).sin()
    }
}

pub fn synthetic_styled(
    n_images: usize,
    shape: ImageShape,
    num_classes: usize,
    seed: u64,
    style: SyntheticStyle,
) -> Result<Dataset> {
    if num_classes < 2 || shape.numel() == 0 {
        return Err(Error::InvalidArgument(
            "synthetic data needs L >= 2 and a non-empty shape".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: Vec<[Wave; 2]> = (0..num_classes)
        .map(|_| [Wave::random(&mut rng, 2.5), Wave::random(&mut rng, 2.5)])
        .collect();
    let normal = rand_distr::Normal::new(0.0, style.noise.max(1e-12)).expect("noise std");
    let mut pixels = Vec::with_capacity(n_images * shape.numel());
    let mut labels = Vec::with_capacity(n_images);
    for _ in 0..n_images {
        let class = rng.random_range(0..num_classes);
        labels.push(class);
        let bg = [Wave::random(&mut rng, 1.5), Wave::random(&mut rng, 1.5)];
        let base: [f64; 3] = [
            rng.random_range(0.3..0.7),
            rng.random_range(0.3..0.7),
            rng.random_range(0.3..0.7),
        ];
        let gain = rng.random_range(0.7..1.0);
        for yy in 0..shape.height {
            let y = yy as f64 / shape.height as f64;
            for xx in 0..shape.width {
                let x = xx as f64 / shape.width as f64;
                for ch in 0..shape.channels {
                    let t = &templates[class];
                    let v = base[ch % 3]
                        + style.signal * gain * (t[0].at(y, x, ch) + t[1].at(y, x, ch))
                        + style.background * 0.5 * (bg[0].at(y, x, ch) + bg[1].at(y, x, ch))
                        + rand_distr::Distribution::sample(&normal, &mut rng);
                    pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
    }
    Dataset::new(
        format!("synthetic-{seed}"),
        shape,
        pixels,
        vec![(CIFAR_SECRET.into(), num_classes, labels)],
    )
}

/// Disjoint train and test splits drawn from one synthetic collection.
pub fn synthetic_split(
    n_train: usize,
    n_test: usize,
    shape: ImageShape,
    num_classes: usize,
    seed: u64,
    style: SyntheticStyle,
) -> Result<(Dataset, Dataset)> {
    let all = synthetic_styled(n_train + n_test, shape, num_classes, seed, style)?;
    let mut train = all.subset(&(0..n_train).collect::<Vec<_>>());
    let mut test = all.subset(&(n_train..n_train + n_test).collect::<Vec<_>>());
    train.name = format!("synthetic-{seed}-train");
    test.name = format!("synthetic-{seed}-test");
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    #[test]
    fn attribute_pair_encoding() {
        assert_eq!(attribute_pair_to_class(0, 0).unwrap(), 0);
        assert_eq!(attribute_pair_to_class(1, 0).unwrap(), 2);
        assert_eq!(attribute_pair_to_class(1, 1).unwrap(), 3);
        let mut seen = [false; 4];
        for a in 0..2 {
            for b in 0..2 {
                seen[attribute_pair_to_class(a, b).unwrap()] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(attribute_pair_to_class(2, 0).is_err());
    }

    #[test]
    fn attribute_pair_preset() {
        let t = celeba_attribute_pairs();
        assert_eq!(t.len(), 6);
        assert_eq!(t[0].attributes, Some(("Wavy_Hair".into(), "Black_Hair".into())));
        assert_eq!(t[3].attributes, Some(("No_Beard".into(), "5_o_Clock_Shadow".into())));
        assert!(t.iter().all(|m| m.num_classes == 4 && m.validate().is_ok()));
        assert!(mapping_preset("imagenet").is_err());
    }

    #[test]
    fn class_weight_examples() {
        let balanced: Vec<usize> = (0..100).map(|i| i % 4).collect();
        assert_eq!(class_weights(&balanced, 4).unwrap(), vec![1.0; 4]);
        let mut skew = vec![0usize; 90];
        skew.extend(vec![1usize; 10]);
        let w = class_weights(&skew, 2).unwrap();
        assert!((w[0] - 100.0 / 180.0).abs() < 1e-12 && (w[1] - 5.0).abs() < 1e-12);
        let per_sample = skew.iter().map(|&l| w[l]).sum::<f64>() / 100.0;
        assert!((per_sample - 1.0).abs() < 1e-12);
        let single = vec![1usize; 10];
        assert_eq!(class_weights(&single, 2).unwrap(), vec![CLASS_WEIGHT_CAP, 0.5]);
        assert!(class_weights(&[], 2).is_err());
    }

    #[test]
    fn secret_labels_are_consistent() {
        let ds = synthetic_dataset(50, 8, 8, 3, 10, 1).unwrap();
        for i in 0..ds.len() {
            let l = ds.label(0, i);
            assert_eq!(l.one_hot()[l.class_index], 1.0);
            assert_eq!(l.one_hot().iter().sum::<f64>(), 1.0);
        }
        assert!(SecretLabel::new(4, 4).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let hash = |ds: &Dataset| crate::params::hex(&Sha256::digest(ds.image(0)));
        let a = synthetic_dataset(5, 32, 32, 3, 10, 42).unwrap();
        let b = synthetic_dataset(5, 32, 32, 3, 10, 42).unwrap();
        let c = synthetic_dataset(5, 32, 32, 3, 10, 43).unwrap();
        assert_eq!(hash(&a), hash(&b));
        assert_ne!(hash(&a), hash(&c));
    }

    #[test]
    fn synthetic_labels_are_uniform() {
        let ds = synthetic_dataset(2000, 4, 4, 3, 10, 7).unwrap();
        let mut counts = [0f64; 10];
        for &l in ds.labels(0) {
            counts[l] += 1.0;
        }
        let (p, n) = (0.1f64, 2000.0f64);
        let sigma = (n * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c - n * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn normalization_round_trip() {
        let ds = synthetic_dataset(4, 8, 8, 3, 4, 3).unwrap();
        let b = ds.batch::<f64>(&[0, 1, 2, 3]).unwrap();
        let raw: Vec<u8> = (0..4).flat_map(|i| ds.image(i).to_vec()).collect();
        assert_eq!(b.to_u8(), raw);
        assert!(b.pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn split_is_disjoint() {
        let shape = ImageShape {
            height: 4,
            width: 4,
            channels: 3,
        };
        let (train, test) = synthetic_split(30, 10, shape, 4, 9, SyntheticStyle::default()).unwrap();
        assert_eq!((train.len(), test.len()), (30, 10));
        assert!(train.source_index().iter().all(|i| !test.source_index().contains(i)));
    }

    #[test]
    fn seeded_batches_repeat() {
        let order = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            epoch_order(100, &mut rng)
        };
        assert_eq!(order(5), order(5));
        assert_ne!(order(5), order(6));
        let o = order(5);
        let sizes: Vec<usize> = batches(&o, 32).map(<[usize]>::len).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
    }
}

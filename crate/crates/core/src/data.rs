//! Labeled datasets: synthetic generators and IDX-format ingestion.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::LayeredModel;
use crate::tensor::Tensor1;

/// Feature vectors with integer class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<Tensor1>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<Tensor1>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} features vs {} labels",
                features.len(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|f| f.len() != first.len()) {
                return Err(Error::ShapeMismatch(
                    "features have inconsistent dimensions".into(),
                ));
            }
        }
        if labels.iter().any(|l| *l >= classes) {
            return Err(Error::InvalidConfig("label out of class range".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.first().map_or(0, Tensor1::len)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[Tensor1] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn example(&self, i: usize) -> (&Tensor1, usize) {
        (&self.features[i], self.labels[i])
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|i| self.features[*i].clone()).collect(),
            labels: indices.iter().map(|i| self.labels[*i]).collect(),
            classes: self.classes,
        }
    }

    /// One-hot targets for every row.
    pub fn one_hot_targets(&self) -> Vec<Tensor1> {
        self.labels
            .iter()
            .map(|l| crate::nn::one_hot(*l, self.classes))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for l in &self.labels {
            counts[*l] += 1;
        }
        counts
    }
}

/// Fraction of rows the model classifies correctly.
pub fn accuracy(model: &LayeredModel, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let (x, y) = ds.example(i);
        if model.predict_class(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Seeded shuffle followed by a split after `first_count` rows.
pub fn shuffled_split(ds: &Dataset, first_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if first_count == 0 || first_count >= ds.len() {
        return Err(Error::Split(format!(
            "split at {} leaves an empty side of a {}-row dataset",
            first_count,
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let first = ds.subset(&order[..first_count]);
    let second = ds.subset(&order[first_count..]);
    Ok((first, second))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Blobs,
    Moons,
    Anisotropic,
}

fn default_cluster_std() -> f64 {
    1.0
}

fn default_separation() -> f64 {
    6.0
}

/// Parameters of the synthetic generators.
///
/// `cluster_std` is the per-coordinate Gaussian spread (for moons, the jitter
/// on the unit-radius geometry); `separation` scales the distance between
/// class centers; `label_noise` flips that fraction of labels to a random
/// other class, which perturbs exact class balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub dims: usize,
    pub classes: usize,
    #[serde(default = "default_cluster_std")]
    pub cluster_std: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub label_noise: f64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.n < self.classes {
            return Err(Error::InvalidConfig(format!(
                "need n >= classes >= 2, got n={} classes={}",
                self.n, self.classes
            )));
        }
        if self.dims == 0 {
            return Err(Error::InvalidConfig("dims must be >= 1".into()));
        }
        if !(self.cluster_std > 0.0) || !(self.separation > 0.0) {
            return Err(Error::InvalidConfig(
                "cluster_std and separation must be > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::InvalidConfig("label_noise must be in [0, 1)".into()));
        }
        if self.kind == SyntheticKind::Moons {
            if self.classes != 2 {
                return Err(Error::InvalidConfig("moons is a 2-class generator".into()));
            }
            if self.dims < 2 {
                return Err(Error::InvalidConfig("moons needs dims >= 2".into()));
            }
        }
        Ok(())
    }
}

/// Class centers on signed coordinate axes at distance `separation`; classes
/// beyond `2 * dims` fall back to random unit directions.
fn blob_centers(spec: &SyntheticSpec, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    (0..spec.classes)
        .map(|k| {
            let mut center = vec![0.0; spec.dims];
            if k < 2 * spec.dims {
                let axis = k / 2;
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                center[axis] = sign * spec.separation;
            } else {
                let mut norm = 0.0;
                for c in center.iter_mut() {
                    *c = rng.sample::<f64, _>(StandardNormal);
                    norm += *c * *c;
                }
                let norm = norm.sqrt().max(1e-12);
                for c in center.iter_mut() {
                    *c *= spec.separation / norm;
                }
            }
            center
        })
        .collect()
}

/// Deterministic synthetic dataset: labels round-robin over classes (balanced
/// within one) and features drawn per label.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let centers = blob_centers(spec, &mut rng);
    // anisotropic: one shared linear distortion applied to every point
    let transform: Option<Vec<f64>> = match spec.kind {
        SyntheticKind::Anisotropic => {
            let d = spec.dims;
            let mut t = vec![0.0; d * d];
            for r in 0..d {
                for c in 0..d {
                    let jitter: f64 = rng.random_range(-0.6..0.6);
                    t[r * d + c] = if r == c { 1.0 + jitter * 0.5 } else { jitter };
                }
            }
            Some(t)
        }
        _ => None,
    };

    let mut features = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = i % spec.classes;
        let mut x = vec![0.0; spec.dims];
        match spec.kind {
            SyntheticKind::Blobs | SyntheticKind::Anisotropic => {
                for (xv, cv) in x.iter_mut().zip(&centers[label]) {
                    let noise: f64 = rng.sample(StandardNormal);
                    *xv = cv + spec.cluster_std * noise;
                }
            }
            SyntheticKind::Moons => {
                let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let (cx, cy) = if label == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                x[0] = cx + spec.cluster_std * rng.sample::<f64, _>(StandardNormal);
                x[1] = cy + spec.cluster_std * rng.sample::<f64, _>(StandardNormal);
                for xv in x.iter_mut().skip(2) {
                    *xv = spec.cluster_std * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        if let Some(t) = &transform {
            let d = spec.dims;
            let mut y = vec![0.0; d];
            for (r, yv) in y.iter_mut().enumerate() {
                for c in 0..d {
                    *yv += t[r * d + c] * x[c];
                }
            }
            x = y;
        }
        let label = if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
            let shift = rng.random_range(1..spec.classes);
            (label + shift) % spec.classes
        } else {
            label
        };
        features.push(Tensor1::new(x)?);
        labels.push(label);
    }
    Dataset::new(features, labels, spec.classes)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::format(
            path.display().to_string(),
            "truncated header",
        ));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Loads an IDX image/label file pair. Pixels are scaled to `[0, 1]`; the
/// class count is inferred from the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)
        .map_err(|e| Error::io(images_path.display().to_string(), e))?;
    let labels = std::fs::read(labels_path)
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;

    let magic = read_u32_be(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            images_path.display().to_string(),
            format!("bad magic 0x{:08x}, expected 0x{:08x}", magic, IDX_IMAGES_MAGIC),
        ));
    }
    let n_images = read_u32_be(&images, 4, images_path)? as usize;
    let rows = read_u32_be(&images, 8, images_path)? as usize;
    let cols = read_u32_be(&images, 12, images_path)? as usize;
    let pixel_count = n_images
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(images_path.display().to_string(), "size overflow"))?;
    if images.len() != 16 + pixel_count {
        return Err(Error::format(
            images_path.display().to_string(),
            format!(
                "payload has {} bytes, header promises {}",
                images.len().saturating_sub(16),
                pixel_count
            ),
        ));
    }

    let magic = read_u32_be(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            labels_path.display().to_string(),
            format!("bad magic 0x{:08x}, expected 0x{:08x}", magic, IDX_LABELS_MAGIC),
        ));
    }
    let n_labels = read_u32_be(&labels, 4, labels_path)? as usize;
    if labels.len() != 8 + n_labels {
        return Err(Error::format(
            labels_path.display().to_string(),
            format!(
                "payload has {} bytes, header promises {}",
                labels.len().saturating_sub(8),
                n_labels
            ),
        ));
    }
    if n_images != n_labels {
        return Err(Error::format(
            images_path.display().to_string(),
            format!("{} images but {} labels", n_images, n_labels),
        ));
    }

    let dim = rows * cols;
    let mut features = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let start = 16 + i * dim;
        let pixels: Vec<f64> = images[start..start + dim]
            .iter()
            .map(|b| *b as f64 / 255.0)
            .collect();
        features.push(Tensor1::new(pixels)?);
    }
    let label_values: Vec<usize> = labels[8..].iter().map(|b| *b as usize).collect();
    let classes = label_values.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(features, label_values, classes)
}

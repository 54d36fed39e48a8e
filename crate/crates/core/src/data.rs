//! Datasets, IDX ingestion and federated sharding.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{seed, Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Samples with integer labels; one-hot encoding happens at loss time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    samples: Vec<Vec<f64>>,
    labels: Vec<usize>,
    label_count: usize,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Vec<f64>>, labels: Vec<usize>, label_count: usize) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::shape("labels", samples.len(), labels.len()));
        }
        if label_count == 0 {
            return Err(Error::invalid("label count must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_count) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {label_count})"
            )));
        }
        if let Some(first) = samples.first() {
            let d = first.len();
            if let Some(s) = samples.iter().find(|s| s.len() != d) {
                return Err(Error::shape("sample dimension", d, s.len()));
            }
        }
        Ok(LabeledDataset {
            samples,
            labels,
            label_count,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (&self.samples[i], self.labels[i])
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.label_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Subset by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_count: self.label_count,
        }
    }

    fn indices_by_label(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.label_count];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l].push(i);
        }
        by
    }

    /// Stratified split: `fraction` of every label goes to the second set.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
        let mut rng = seed::stream(seed, "holdout", 0, 0);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for mut idx in self.indices_by_label() {
            idx.shuffle(&mut rng);
            let k = (idx.len() as f64 * fraction).round() as usize;
            test.extend_from_slice(&idx[..k]);
            train.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        (self.select(&train), self.select(&test))
    }

    /// SHA-256 over dims, labels and little-endian sample bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.label_count as u64).to_le_bytes());
        h.update((self.samples.len() as u64).to_le_bytes());
        for (s, &l) in self.samples.iter().zip(&self.labels) {
            h.update((l as u64).to_le_bytes());
            for v in s {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One row per sample, features then label.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (s, l) in self.samples.iter().zip(&self.labels) {
            let mut row: Vec<String> = s.iter().map(|v| format!("{v:.17e}")).collect();
            row.push(l.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gaussian cluster per class: means drawn once from `seed` as standard
/// normal vectors, samples scattered around them with standard deviation 0.3.
pub fn synth_classification(
    classes: usize,
    per_class: usize,
    dim: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::invalid("classes, per_class and dim must be positive"));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut mean_rng = seed::stream(seed, "synth-means", 0, 0);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| normal.sample(&mut mean_rng)).collect())
        .collect();
    let spread = Normal::new(0.0, SYNTH_SPREAD).expect("spread");
    let mut rng = seed::stream(seed, "synth-samples", 0, 0);
    let mut samples = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (c, mu) in means.iter().enumerate() {
            samples.push(mu.iter().map(|m| m + spread.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    LabeledDataset::new(samples, labels, classes)
}

pub const SYNTH_SPREAD: f64 = 0.3;

fn read_be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Truncated {
            needed: at + 4,
            available: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Parse(format!(
            "bad IDX magic 0x{magic:08x}, expected 0x{expected:08x}"
        )));
    }
    Ok(())
}

/// Parses an IDX3 unsigned-byte image file; pixels are scaled to [0, 1].
/// Returns the images and `(rows, cols)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, (usize, usize))> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let dim = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Parse("image dimensions overflow".into()))?;
    if dim == 0 {
        return Err(Error::Parse("zero-sized images".into()));
    }
    let needed = dim
        .checked_mul(count)
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| Error::Parse("image payload size overflows".into()))?;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let images = bytes[16..needed]
        .chunks_exact(dim)
        .map(|px| px.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    Ok((images, (rows, cols)))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_be_u32(bytes, 4)? as usize;
    let needed = count
        .checked_add(8)
        .ok_or_else(|| Error::Parse("label count overflows".into()))?;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[8..needed].iter().map(|&b| usize::from(b)).collect())
}

/// Builds a dataset from IDX image and label buffers. The label count is
/// `max(label) + 1`, at least 10.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let (samples, _) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if samples.len() != labels.len() {
        return Err(Error::Parse(format!(
            "{} images but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let label_count = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    LabeledDataset::new(samples, labels, label_count)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Per-worker composition of a non-IID shard: `minority_labels` labels picked
/// per worker get `minority_count` samples, the rest `majority_count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonIidRecipe {
    pub minority_labels: usize,
    pub minority_count: usize,
    pub majority_count: usize,
}

impl Default for NonIidRecipe {
    fn default() -> Self {
        NonIidRecipe {
            minority_labels: 2,
            minority_count: 2,
            majority_count: 62,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ShardPlan {
    /// Every label split evenly across workers.
    Iid { seed: u64 },
    NonIid {
        #[serde(default)]
        recipe: NonIidRecipe,
        seed: u64,
    },
    /// Explicit `counts[worker][label]`.
    Explicit { counts: Vec<Vec<usize>>, seed: u64 },
}

impl ShardPlan {
    pub fn seed(&self) -> u64 {
        match *self {
            ShardPlan::Iid { seed } | ShardPlan::NonIid { seed, .. } | ShardPlan::Explicit { seed, .. } => seed,
        }
    }

    /// Resolved `counts[worker][label]` for a dataset with this histogram.
    pub fn per_worker_counts(&self, workers: usize, histogram: &[usize]) -> Result<Vec<Vec<usize>>> {
        let labels = histogram.len();
        match self {
            ShardPlan::Iid { .. } => Ok((0..workers)
                .map(|w| {
                    histogram
                        .iter()
                        .map(|&n| n / workers + usize::from(w < n % workers))
                        .collect()
                })
                .collect()),
            ShardPlan::NonIid { recipe, seed } => {
                if recipe.minority_labels > labels {
                    return Err(Error::invalid(format!(
                        "recipe selects {} minority labels out of {labels}",
                        recipe.minority_labels
                    )));
                }
                Ok((0..workers)
                    .map(|w| {
                        let mut rng = seed::stream(*seed, "non-iid-labels", w as u64, 0);
                        let mut order: Vec<usize> = (0..labels).collect();
                        order.shuffle(&mut rng);
                        let mut counts = vec![recipe.majority_count; labels];
                        for &l in &order[..recipe.minority_labels] {
                            counts[l] = recipe.minority_count;
                        }
                        counts
                    })
                    .collect())
            }
            ShardPlan::Explicit { counts, .. } => {
                if counts.len() != workers {
                    return Err(Error::shape("explicit shard plan workers", workers, counts.len()));
                }
                if let Some(row) = counts.iter().find(|r| r.len() != labels) {
                    return Err(Error::shape("explicit shard plan labels", labels, row.len()));
                }
                Ok(counts.clone())
            }
        }
    }
}

/// Disjoint shards drawn without replacement from `ds`.
pub fn shard(ds: &LabeledDataset, workers: usize, plan: &ShardPlan) -> Result<Vec<LabeledDataset>> {
    if workers == 0 {
        return Err(Error::invalid("need at least one worker"));
    }
    let histogram = ds.label_histogram();
    let counts = plan.per_worker_counts(workers, &histogram)?;
    for (label, &available) in histogram.iter().enumerate() {
        let needed: usize = counts.iter().map(|c| c[label]).sum();
        if needed > available {
            return Err(Error::Allocation {
                label,
                needed,
                available,
            });
        }
    }
    let mut rng = seed::stream(plan.seed(), "shard", 0, 0);
    let mut pools = ds.indices_by_label();
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut cursors = vec![0usize; pools.len()];
    let mut shards = Vec::with_capacity(workers);
    for worker_counts in &counts {
        let mut idx = Vec::new();
        for (label, &k) in worker_counts.iter().enumerate() {
            idx.extend_from_slice(&pools[label][cursors[label]..cursors[label] + k]);
            cursors[label] += k;
        }
        idx.shuffle(&mut rng);
        shards.push(ds.select(&idx));
    }
    Ok(shards)
}

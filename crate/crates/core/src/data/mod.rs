//! Datasets, client shards and mini-batching.

mod idx;
mod partition;
mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::{Batch, InputShape};
use crate::seed::rng_from;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels};
pub use partition::{filter_labels, partition, Filtered, PartitionPlan};
pub use synth::{synth_generate, synth_means, synth_test_set, SynthSpec};

/// Samples stored row-major with a shared per-sample shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    shape: InputShape,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        shape: InputShape,
        classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if features.len() != labels.len() * shape.len() {
            return Err(Error::Shape(format!(
                "{} feature values for {} samples of width {}",
                features.len(),
                labels.len(),
                shape.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Invalid(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        Ok(Self {
            shape,
            classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> InputShape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.shape.len();
        &self.features[i * w..(i + 1) * w]
    }

    /// Copies the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
        }
        Self {
            shape: self.shape,
            classes: self.classes,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// First `n` samples (or all of them).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            shape: self.shape,
            classes: self.classes,
            features: self.features[..n * self.shape.len()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn label_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_default() += 1;
        }
        counts
    }
}

/// One client's private data. `source_indices` points back into the
/// dataset the shard was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub dataset: LabeledDataset,
    pub source_indices: Vec<usize>,
}

impl ClientShard {
    pub fn sample_count(&self) -> usize {
        self.dataset.len()
    }
}

/// Splits a shard into mini-batches after a seeded permutation; the last
/// batch may be short.
pub fn batches(shard: &ClientShard, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    let ds = &shard.dataset;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng_from(seed));
    order
        .chunks(batch_size)
        .map(|idx| {
            let mut inputs = Vec::with_capacity(idx.len() * ds.shape.len());
            for &i in idx {
                inputs.extend_from_slice(ds.sample(i));
            }
            Batch::new(inputs, idx.iter().map(|&i| ds.labels[i]).collect())
        })
        .collect()
}

//! Labeled datasets, synthetic domain-shift tasks, corruptions, CSV I/O and
//! source-domain pretraining.

mod batching;
mod corruption;
mod csv_io;
mod generator;
mod pretrain;

pub use batching::{batches, Batch};
pub use corruption::{corrupt, CorruptionFamily, CorruptionSpec};
pub use csv_io::{load_csv, save_csv, tensor_checksum, CsvSchema};
pub use generator::{
    kl_divergence_mc, DomainShiftTask, MixtureDensity, ShiftDescriptor, TaskSpec,
};
pub use pretrain::{pretrain_source, PretrainConfig, PretrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Feature matrix `[n, d]` with one class label and one stable sample id per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
}

impl LabeledSet {
    pub fn new(features: Tensor, labels: Vec<usize>, ids: Vec<u64>) -> Result<Self> {
        features.ensure_matrix("labeled set")?;
        if labels.len() != features.rows() || ids.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} rows, {} labels, {} ids",
                features.rows(),
                labels.len(),
                ids.len()
            )));
        }
        features.ensure_finite("labeled set")?;
        Ok(Self {
            features,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        })
    }

    /// Per-class frequency for `classes` classes.
    pub fn class_priors(&self, classes: usize) -> Vec<f64> {
        let mut counts = vec![0.0; classes];
        for &y in &self.labels {
            if y < classes {
                counts[y] += 1.0;
            }
        }
        let n = self.len().max(1) as f64;
        counts.iter().map(|c| c / n).collect()
    }
}

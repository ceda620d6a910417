use rand::seq::SliceRandom;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

/// Splits `set` into mini-batches. With a shuffle seed the row order is a
/// seeded permutation, otherwise the set order is kept. `drop_last` discards
/// a trailing short batch so every batch has exactly `batch_size` rows.
pub fn batches(
    set: &LabeledSet,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    drop_last: bool,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if set.is_empty() {
        return Err(Error::EmptyDataset("cannot batch an empty set".into()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut rng_from_seed(seed));
    }
    let mut out = Vec::with_capacity(set.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        if drop_last && chunk.len() < batch_size {
            break;
        }
        out.push(Batch {
            x: set.features.select_rows(chunk)?,
            labels: chunk.iter().map(|&i| set.labels[i]).collect(),
        });
    }
    Ok(out)
}

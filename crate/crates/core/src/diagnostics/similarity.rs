use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::{dot, l2_norm};

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; values outside are clamped into the
    /// end bins.
    pub fn build(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins.max(1)];
        let n = counts.len();
        let width = (hi - lo) / n as f64;
        for &v in values {
            let idx = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
            counts[(idx.max(0.0) as usize).min(n - 1)] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRanking {
    pub class: usize,
    /// Sample indices, highest cosine first.
    pub highest: Vec<usize>,
    /// Sample indices, lowest cosine first.
    pub lowest: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub cosine: Vec<f64>,
    pub l2: Vec<f64>,
    pub cosine_histogram: Histogram,
    pub l2_histogram: Histogram,
    pub mean_cosine: f64,
    pub median_cosine: f64,
    pub mean_l2: f64,
    pub median_l2: f64,
    pub rankings: Vec<ClassRanking>,
    /// Samples where either feature vector was all zeros (cosine set to 0).
    pub zero_vectors: usize,
}

impl SimilarityReport {
    pub fn to_csv(&self, ids: &[u64], labels: &[usize]) -> String {
        let mut s = String::from("index,id,label,cosine,l2\n");
        for i in 0..self.cosine.len() {
            s.push_str(&format!(
                "{i},{},{},{},{}\n",
                ids.get(i).copied().unwrap_or(i as u64),
                labels.get(i).copied().unwrap_or(0),
                self.cosine[i],
                self.l2[i]
            ));
        }
        s
    }
}

/// Cosine similarity, or `None` when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-sample cosine and L2 between test-mode features of `pre` and `post`.
pub fn feature_similarity(
    pre: &Network,
    post: &Network,
    set: &LabeledSet,
    bins: usize,
    rank_k: usize,
) -> Result<SimilarityReport> {
    if pre.feature_dim() != post.feature_dim() {
        return Err(Error::Shape(format!(
            "feature widths differ: {} vs {}",
            pre.feature_dim(),
            post.feature_dim()
        )));
    }
    if set.is_empty() {
        return Err(Error::EmptyDataset("similarity test set".into()));
    }
    let a = pre.features(&set.features)?;
    let b = post.features(&set.features)?;
    let n = set.len();
    let mut cos = Vec::with_capacity(n);
    let mut l2 = Vec::with_capacity(n);
    let mut zero_vectors = 0;
    for i in 0..n {
        let (ra, rb) = (a.row(i), b.row(i));
        cos.push(cosine(ra, rb).unwrap_or_else(|| {
            zero_vectors += 1;
            0.0
        }));
        l2.push(ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
    }
    let l2_max = l2.iter().copied().fold(0.0, f64::max);
    let classes = set.labels.iter().max().map_or(0, |m| m + 1);
    let rankings = (0..classes)
        .map(|class| {
            let mut idx: Vec<usize> = (0..n).filter(|&i| set.labels[i] == class).collect();
            // stable sort keeps the lower index first on equal cosines
            idx.sort_by(|&x, &y| cos[y].total_cmp(&cos[x]));
            let highest = idx.iter().take(rank_k).copied().collect();
            let lowest = idx.iter().rev().take(rank_k).copied().collect();
            ClassRanking {
                class,
                highest,
                lowest,
            }
        })
        .collect();
    Ok(SimilarityReport {
        cosine_histogram: Histogram::build(&cos, -1.0, 1.0, bins),
        l2_histogram: Histogram::build(&l2, 0.0, if l2_max > 0.0 { l2_max } else { 1.0 }, bins),
        mean_cosine: mean(&cos),
        median_cosine: median(&cos),
        mean_l2: mean(&l2),
        median_l2: median(&l2),
        cosine: cos,
        l2,
        rankings,
        zero_vectors,
    })
}

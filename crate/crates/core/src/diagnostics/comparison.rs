use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::Strategy;

/// Headline numbers of one (strategy, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub seed: u64,
    pub median_cosine: f64,
    pub median_l2: f64,
    /// Mean relative change over all tensors with a defined value.
    pub mean_relative_change: f64,
    pub mean_bn_stat_change: f64,
    pub id_accuracy: f64,
    pub ood_accuracy: f64,
}

const METRICS: [(&str, bool); 6] = [
    ("median_cosine", true),
    ("median_l2", false),
    ("mean_relative_change", false),
    ("mean_bn_stat_change", false),
    ("id_accuracy", true),
    ("ood_accuracy", true),
];

fn metric(run: &StrategyRun, name: &str) -> f64 {
    match name {
        "median_cosine" => run.median_cosine,
        "median_l2" => run.median_l2,
        "mean_relative_change" => run.mean_relative_change,
        "mean_bn_stat_change" => run.mean_bn_stat_change,
        "id_accuracy" => run.id_accuracy,
        "ood_accuracy" => run.ood_accuracy,
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub higher_is_better: bool,
    /// `a - b` per seed, in seed order.
    pub deltas: Vec<f64>,
    pub mean_delta: f64,
    /// Seeds where `a` is strictly better.
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// `(wins_a + ties / 2) / seeds`.
    pub win_rate_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: Strategy,
    pub b: Strategy,
    pub seeds: Vec<u64>,
    pub metrics: Vec<MetricDelta>,
}

impl PairComparison {
    pub fn metric(&self, name: &str) -> Option<&MetricDelta> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub pairs: Vec<PairComparison>,
}

impl ComparisonSummary {
    pub fn pair(&self, a: Strategy, b: Strategy) -> Option<&PairComparison> {
        self.pairs.iter().find(|p| p.a == a && p.b == b)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("a,b,metric,mean_delta,wins_a,wins_b,ties,win_rate_a\n");
        for p in &self.pairs {
            for m in &p.metrics {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    p.a, p.b, m.metric, m.mean_delta, m.wins_a, m.wins_b, m.ties, m.win_rate_a
                ));
            }
        }
        s
    }
}

fn by_seed<'a>(runs: &[&'a StrategyRun], s: u64) -> &'a StrategyRun {
    runs.iter().find(|r| r.seed == s).unwrap()
}

/// Paired per-seed comparison of strategy `a` against `b`.
pub fn compare_pair(a: &[&StrategyRun], b: &[&StrategyRun]) -> Result<PairComparison> {
    let seeds_a: BTreeSet<u64> = a.iter().map(|r| r.seed).collect();
    let seeds_b: BTreeSet<u64> = b.iter().map(|r| r.seed).collect();
    if seeds_a != seeds_b || seeds_a.len() != a.len() || seeds_b.len() != b.len() {
        return Err(Error::InvalidArgument(
            "strategies must be compared over the same set of distinct seeds".into(),
        ));
    }
    if seeds_a.is_empty() {
        return Err(Error::InvalidArgument("no runs to compare".into()));
    }
    let seeds: Vec<u64> = seeds_a.into_iter().collect();
    let metrics = METRICS
        .iter()
        .map(|&(name, higher)| {
            let deltas: Vec<f64> = seeds
                .iter()
                .map(|&s| metric(by_seed(a, s), name) - metric(by_seed(b, s), name))
                .collect();
            let better = |d: f64| if higher { d > 0.0 } else { d < 0.0 };
            let wins_a = deltas.iter().filter(|&&d| better(d)).count();
            let ties = deltas.iter().filter(|&&d| d == 0.0).count();
            let wins_b = deltas.len() - wins_a - ties;
            MetricDelta {
                metric: name.to_string(),
                higher_is_better: higher,
                mean_delta: deltas.iter().sum::<f64>() / deltas.len() as f64,
                win_rate_a: (wins_a as f64 + 0.5 * ties as f64) / deltas.len() as f64,
                deltas,
                wins_a,
                wins_b,
                ties,
            }
        })
        .collect();
    Ok(PairComparison {
        a: a[0].strategy,
        b: b[0].strategy,
        seeds,
        metrics,
    })
}

/// All ordered pairs `(a, b)` with `a != b` among the strategies present.
pub fn method_comparison(runs: &[StrategyRun]) -> Result<ComparisonSummary> {
    let mut groups: BTreeMap<Strategy, Vec<&StrategyRun>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.strategy).or_default().push(r);
    }
    if groups.len() < 2 {
        return Err(Error::InvalidArgument("comparison needs at least two strategies".into()));
    }
    let mut pairs = Vec::new();
    for (a, ra) in &groups {
        for (b, rb) in &groups {
            if a != b {
                pairs.push(compare_pair(ra, rb)?);
            }
        }
    }
    Ok(ComparisonSummary { pairs })
}

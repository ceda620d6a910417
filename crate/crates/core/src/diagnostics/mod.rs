//! Feature-distortion and robustness diagnostics over immutable checkpoints.

mod comparison;
mod corruption_error;
mod relative_change;
mod similarity;

pub use comparison::{compare_pair, method_comparison, ComparisonSummary, MetricDelta, PairComparison, StrategyRun};
pub use corruption_error::{corruption_error, full_grid, CorruptionCell, CorruptionTable};
pub use relative_change::{relative_change, Baseline, RelativeChange, RelativeChangeReport};
pub use similarity::{cosine, feature_similarity, Histogram, SimilarityReport, DEFAULT_BINS};

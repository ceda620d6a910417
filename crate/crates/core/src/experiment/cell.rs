use serde::{Deserialize, Serialize};

use crate::bn_convert::ConversionRecord;
use crate::data::DomainShiftTask;
use crate::diagnostics::{
    corruption_error, feature_similarity, full_grid, relative_change, Baseline, CorruptionTable,
    RelativeChangeReport, SimilarityReport, StrategyRun,
};
use crate::error::{Error, Result};
use crate::finetune::{
    accuracy, run_strategy, sweep_learning_rates, Hyper, Strategy, SweepGrids, SweepResult, TrainData, TrainLog,
};
use crate::nn::Network;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellOptions<'a> {
    /// Name of the OOD split used for the headline OOD accuracy.
    pub ood_split: &'a str,
    pub bins: usize,
    pub rank_k: usize,
    pub corruption: bool,
}

impl Default for CellOptions<'_> {
    fn default() -> Self {
        Self {
            ood_split: "strong",
            bins: crate::diagnostics::DEFAULT_BINS,
            rank_k: 5,
            corruption: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub summary: StrategyRun,
    pub hyper: Hyper,
    pub sweep: Option<SweepResult>,
    pub log: TrainLog,
    pub conversion: Option<ConversionRecord>,
    pub similarity: SimilarityReport,
    pub relative: RelativeChangeReport,
    pub ood_accuracies: Vec<(String, f64)>,
    pub corruption: Option<CorruptionTable>,
    pub network: Network,
}

/// One (strategy, seed) cell: optional sweep, training, then diagnostics on
/// the target ID test set and every OOD split.
pub fn run_cell(
    task: &DomainShiftTask,
    pretrained: &Network,
    strategy: Strategy,
    hyper: &Hyper,
    grids: Option<&SweepGrids>,
    opts: CellOptions<'_>,
) -> Result<CellResult> {
    let data = TrainData {
        train: &task.target_train,
        val: &task.target_val,
    };
    let mut hyper = hyper.clone();
    let sweep = match grids {
        Some(g) if strategy != Strategy::Lp => {
            let r = sweep_learning_rates(pretrained, strategy, data, &hyper, g)?;
            hyper.eta_theta = r.chosen_eta_theta;
            hyper.eta_w = r.chosen_eta_w;
            Some(r)
        }
        _ => None,
    };
    let outcome = run_strategy(pretrained, strategy, data, &hyper)?;
    let similarity = feature_similarity(pretrained, &outcome.network, &task.target_test_id, opts.bins, opts.rank_k)?;
    let baseline = if outcome.conversion.is_some() {
        Baseline::PostConversion
    } else {
        Baseline::PreConversion
    };
    let relative = relative_change(&outcome.baseline, &outcome.network, baseline)?;
    let id_accuracy = accuracy(&outcome.network, &task.target_test_id)?;
    let ood_accuracies = task
        .target_test_ood
        .iter()
        .map(|(name, set)| Ok((name.clone(), accuracy(&outcome.network, set)?)))
        .collect::<Result<Vec<_>>>()?;
    let ood_accuracy = ood_accuracies
        .iter()
        .find(|(n, _)| n == opts.ood_split)
        .map(|(_, a)| *a)
        .ok_or_else(|| Error::Config(format!("task has no OOD split named {:?}", opts.ood_split)))?;
    let corruption = if opts.corruption {
        Some(corruption_error(
            &outcome.network,
            &task.target_test_id,
            &full_grid(),
            derive_seed(hyper.seed, "corruption"),
        )?)
    } else {
        None
    };
    let summary = StrategyRun {
        strategy,
        seed: hyper.seed,
        median_cosine: similarity.median_cosine,
        median_l2: similarity.median_l2,
        mean_relative_change: relative.mean_all().unwrap_or(0.0),
        mean_bn_stat_change: relative.mean_bn_statistics().unwrap_or(0.0),
        id_accuracy,
        ood_accuracy,
    };
    Ok(CellResult {
        summary,
        hyper,
        sweep,
        log: outcome.log,
        conversion: outcome.conversion,
        similarity,
        relative,
        ood_accuracies,
        corruption,
        network: outcome.network,
    })
}

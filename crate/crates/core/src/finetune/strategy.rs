use serde::{Deserialize, Serialize};

use super::config::{FineTuneConfig, Strategy, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_MOMENTUM};
use super::linear_probe::{run_linear_probe, DEFAULT_L2_GRID};
use super::schedule::Schedule;
use super::trainer::{init_head, run_fine_tune, TrainData, TrainLog};
use crate::bn_convert::{convert_verified, estimate_target_statistics, ConversionRecord};
use crate::data::batches;
use crate::error::Result;
use crate::nn::Network;
use crate::rng::derive_seed;

/// Hyperparameters shared by every strategy. Fields a strategy does not
/// use are ignored (for instance `eta_w` for FT and LPFT).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub eta_theta: f64,
    pub eta_w: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub patience: Option<usize>,
    pub l2_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            eta_theta: 0.03,
            eta_w: 0.1,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            schedule: Schedule::Cosine,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: 0.0,
            patience: None,
            l2_grid: DEFAULT_L2_GRID.to_vec(),
            seed: 0,
        }
    }
}

impl Hyper {
    pub fn config(&self, strategy: Strategy) -> FineTuneConfig {
        FineTuneConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: self.schedule,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            patience: self.patience,
            ..FineTuneConfig::for_strategy(strategy, self.eta_theta, self.eta_w, self.seed)
        }
    }
}

#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub network: Network,
    pub log: TrainLog,
    /// Only for DAFT.
    pub conversion: Option<ConversionRecord>,
    /// Reference point for relative-change measurements: the network right
    /// before the fine-tuning stage starts (after head init, after the LP
    /// stage for LPFT and after conversion for DAFT).
    pub baseline: Network,
    pub lp_l2: Option<f64>,
}

/// Runs one strategy end to end from a pretrained checkpoint.
pub fn run_strategy(
    pretrained: &Network,
    strategy: Strategy,
    data: TrainData<'_>,
    hyper: &Hyper,
) -> Result<StrategyOutcome> {
    run_config(pretrained, &hyper.config(strategy), data, &hyper.l2_grid)
}

/// [`run_strategy`] with an explicit (possibly non-canonical) config.
pub fn run_config(
    pretrained: &Network,
    config: &FineTuneConfig,
    data: TrainData<'_>,
    l2_grid: &[f64],
) -> Result<StrategyOutcome> {
    config.validate()?;
    let strategy = config.strategy;
    if strategy == Strategy::Lp {
        let lp = run_linear_probe(pretrained, data, l2_grid)?;
        return Ok(StrategyOutcome {
            strategy,
            baseline: pretrained.clone(),
            network: lp.network,
            log: lp.log,
            conversion: None,
            lp_l2: Some(lp.l2),
        });
    }

    let mut start = pretrained.clone();
    let mut lp_l2 = None;
    if config.head_init == super::config::HeadInit::FromLp && strategy == Strategy::LpFt {
        let lp = run_linear_probe(pretrained, data, l2_grid)?;
        start = lp.network;
        lp_l2 = Some(lp.l2);
    }

    let mut conversion = None;
    if config.bn_conversion {
        let stat_batches: Vec<_> = batches(
            data.train,
            config.batch_size,
            Some(derive_seed(config.seed, "bn-stats")),
            true,
        )?
        .into_iter()
        .map(|b| b.x)
        .collect();
        let stats = estimate_target_statistics(&start, &stat_batches)?;
        conversion = Some(convert_verified(&mut start, &stats, &stat_batches)?);
    }

    let mut baseline = start.clone();
    init_head(&mut baseline, config)?;
    let (network, log) = run_fine_tune(start, config, data)?;
    Ok(StrategyOutcome {
        strategy,
        network,
        log,
        conversion,
        baseline,
        lp_l2,
    })
}

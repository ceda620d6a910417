use serde::{Deserialize, Serialize};

use super::generator::DomainShiftTask;
use crate::error::{Error, Result};
use crate::finetune::{run_fine_tune, FineTuneConfig, HeadInit, Schedule, Strategy, TrainData, TrainLog};
use crate::nn::{ArchSpec, BnMode, Network, SeedRecord};
use crate::rng::{derive_seed, derived_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a source_val improvement.
    pub patience: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_epochs: 40,
            patience: 5,
            batch_size: 64,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub source_val_accuracy: f64,
    pub log: TrainLog,
}

/// Trains a fresh network on `task.source_train` with train-mode BN and
/// returns the checkpoint with the best source_val accuracy.
pub fn pretrain_source(
    arch: &ArchSpec,
    task: &DomainShiftTask,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(Network, PretrainReport)> {
    if arch.input_dim != task.spec.feature_dim || arch.classes != task.spec.class_count {
        return Err(Error::Config(format!(
            "architecture is {}->{} but the task has {} features and {} classes",
            arch.input_dim, arch.classes, task.spec.feature_dim, task.spec.class_count
        )));
    }
    if cfg.max_epochs == 0 {
        return Err(Error::Config("max_epochs must be at least 1".into()));
    }
    let init_seed = derive_seed(seed, "pretrain/init");
    let mut net = arch.build(&mut derived_rng(seed, "pretrain/init"))?;
    net.seed_lineage.push(SeedRecord {
        label: "pretrain/init".into(),
        seed: init_seed,
    });

    // The fine-tuning loop with both parts trainable and the freshly built
    // head kept as is.
    let config = FineTuneConfig {
        strategy: Strategy::Ft,
        eta_theta: cfg.learning_rate,
        eta_w: cfg.learning_rate,
        epochs: cfg.max_epochs,
        batch_size: cfg.batch_size,
        schedule: Schedule::Constant,
        head_init: HeadInit::FromLp,
        bn_mode_during_ft: BnMode::Train,
        bn_conversion: false,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        patience: Some(cfg.patience),
        seed: derive_seed(seed, "pretrain/train"),
    };
    let data = TrainData {
        train: &task.source_train,
        val: &task.source_val,
    };
    let (net, log) = run_fine_tune(net, &config, data)?;
    let report = PretrainReport {
        epochs_run: log.epochs.len(),
        best_epoch: log.best_epoch,
        source_val_accuracy: log.best_val_accuracy(),
        log,
    };
    Ok((net, report))
}

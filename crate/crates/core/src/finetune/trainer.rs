use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{FineTuneConfig, HeadInit};
use super::optimizer::Sgd;
use crate::data::{batches, LabeledSet};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, softmax_cross_entropy, Network, Trainable};
use crate::rng::{derive_seed, derived_rng};

#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a LabeledSet,
    /// ID validation set used for model selection.
    pub val: &'a LabeledSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub lr_theta: f64,
    pub lr_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Index into `epochs` with the highest validation accuracy (earliest on ties).
    pub best_epoch: usize,
    /// Excluded from serialized logs so reruns are byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainLog {
    pub fn best_val_accuracy(&self) -> f64 {
        self.epochs
            .get(self.best_epoch)
            .map(|e| e.val_accuracy)
            .unwrap_or(f64::NEG_INFINITY)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_accuracy,lr_theta,lr_w,l2,best\n");
        for (i, e) in self.epochs.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch,
                e.train_loss,
                e.val_accuracy,
                e.lr_theta,
                e.lr_w,
                e.l2.map(|v| v.to_string()).unwrap_or_default(),
                u8::from(i == self.best_epoch)
            ));
        }
        s
    }
}

/// Fraction of rows whose test-mode argmax matches the label.
pub fn accuracy(net: &Network, set: &LabeledSet) -> Result<f64> {
    let (_, logits) = net.infer(&set.features)?;
    let pred = argmax_rows(&logits);
    let hits = pred.iter().zip(&set.labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Mean cross-entropy in test mode.
pub fn mean_loss(net: &Network, set: &LabeledSet) -> Result<f64> {
    let (_, logits) = net.infer(&set.features)?;
    Ok(softmax_cross_entropy(&logits, &set.labels)?.0)
}

/// Installs the head requested by `config`. Zero init falls back to random
/// when the head has more than one layer.
pub fn init_head(net: &mut Network, config: &FineTuneConfig) -> Result<()> {
    match config.head_init {
        HeadInit::Zero if net.is_single_dense_head() => net.zero_head(),
        HeadInit::Zero | HeadInit::Random => {
            let mut rng = derived_rng(config.seed, "head");
            net.randomize_head(&mut rng);
            Ok(())
        }
        HeadInit::FromLp => Ok(()),
    }
}

/// SGD fine-tuning with separate feature-extractor / head learning rates.
/// Returns the network from the epoch with the best ID validation accuracy.
pub fn run_fine_tune(
    net: Network,
    config: &FineTuneConfig,
    data: TrainData<'_>,
) -> Result<(Network, TrainLog)> {
    run_fine_tune_observed(net, config, data, &mut |_, _| {})
}

/// [`run_fine_tune`] with a callback after every optimizer step
/// (`step` counts from 1).
pub fn run_fine_tune_observed(
    mut net: Network,
    config: &FineTuneConfig,
    data: TrainData<'_>,
    observer: &mut dyn FnMut(usize, &Network),
) -> Result<(Network, TrainLog)> {
    config.validate()?;
    if config.bn_conversion && !net.bn_converted {
        return Err(Error::Config(
            "configuration requires batch-norm conversion before fine-tuning".into(),
        ));
    }
    if data.train.dim() != net.input_dim || data.val.dim() != net.input_dim {
        return Err(Error::Shape("dataset width does not match the network".into()));
    }
    init_head(&mut net, config)?;

    let start = Instant::now();
    let steps_per_epoch = data.train.len() / config.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::EmptyDataset(format!(
            "training set of {} rows is smaller than one batch of {}",
            data.train.len(),
            config.batch_size
        )));
    }
    let total = steps_per_epoch * config.epochs;
    let trainable = Trainable {
        feature_extractor: config.eta_theta > 0.0,
        head: true,
    };
    let mut sgd = Sgd::new(config.momentum, config.weight_decay);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Network)> = None;
    let mut step = 0;

    for epoch in 0..config.epochs {
        let shuffle = derive_seed(config.seed, &format!("shuffle/{epoch}"));
        let epoch_batches = batches(data.train, config.batch_size, Some(shuffle), true)?;
        let mult0 = config.schedule.multiplier(step, total);
        let mut loss_sum = 0.0;
        for batch in &epoch_batches {
            let mult = config.schedule.multiplier(step, total);
            let (lr_theta, lr_w) = (config.eta_theta * mult, config.eta_w * mult);
            let diverged = |loss: f64| Error::Diverged {
                step,
                epoch,
                loss,
                eta_theta: config.eta_theta,
                eta_w: config.eta_w,
            };
            let pass = match net.forward(&batch.x, config.bn_mode_during_ft) {
                Ok(p) => p,
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            let (loss, grad) = match softmax_cross_entropy(&pass.logits, &batch.labels) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            let grads = net.backward(&pass.tape, &grad, trainable)?;
            if grads.iter().any(|(_, g)| g.data().iter().any(|v| !v.is_finite())) {
                return Err(diverged(loss));
            }
            sgd.step(&mut net, &grads, lr_theta, lr_w);
            loss_sum += loss;
            step += 1;
            observer(step, &net);
        }
        let val_accuracy = match accuracy(&net, data.val) {
            Ok(a) => a,
            Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged {
                    step,
                    epoch,
                    loss: f64::NAN,
                    eta_theta: config.eta_theta,
                    eta_w: config.eta_w,
                })
            }
            Err(e) => return Err(e),
        };
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / epoch_batches.len() as f64,
            val_accuracy,
            lr_theta: config.eta_theta * mult0,
            lr_w: config.eta_w * mult0,
            l2: None,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, net.clone()));
            log.best_epoch = epoch;
        }
        if let Some(p) = config.patience {
            if epoch - log.best_epoch >= p {
                break;
            }
        }
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    let (_, best_net) = best.expect("at least one epoch");
    Ok((best_net, log))
}

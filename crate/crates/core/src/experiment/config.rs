use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{PretrainConfig, TaskSpec};
use crate::error::{Error, Result};
use crate::finetune::{Hyper, Schedule, Strategy, SweepGrids, DEFAULT_L2_GRID};
use crate::nn::ArchSpec;
use crate::tensor::Precision;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Learning rates of one strategy. `eta_w` only matters for DAFT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub eta_theta: f64,
    #[serde(default = "default_eta_w")]
    pub eta_w: f64,
}

fn default_eta_w() -> f64 {
    crate::finetune::STAGE1_HEAD_LR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyRates {
    pub ft: LearningRates,
    pub lpft: LearningRates,
    pub daft: LearningRates,
}

impl Default for StrategyRates {
    fn default() -> Self {
        Self {
            ft: LearningRates {
                eta_theta: 0.03,
                eta_w: 0.03,
            },
            lpft: LearningRates {
                eta_theta: 1e-4,
                eta_w: 1e-4,
            },
            daft: LearningRates {
                eta_theta: 0.03,
                eta_w: 0.1,
            },
        }
    }
}

impl StrategyRates {
    pub fn get(&self, strategy: Strategy) -> Option<LearningRates> {
        match strategy {
            Strategy::Lp => None,
            Strategy::Ft => Some(self.ft),
            Strategy::LpFt => Some(self.lpft),
            Strategy::Daft => Some(self.daft),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyGrids {
    pub ft: SweepGrids,
    pub lpft: SweepGrids,
    pub daft: SweepGrids,
}

impl Default for StrategyGrids {
    fn default() -> Self {
        Self {
            ft: SweepGrids::for_strategy(Strategy::Ft),
            lpft: SweepGrids::for_strategy(Strategy::LpFt),
            daft: SweepGrids::for_strategy(Strategy::Daft),
        }
    }
}

impl StrategyGrids {
    pub fn get(&self, strategy: Strategy) -> Option<&SweepGrids> {
        match strategy {
            Strategy::Lp => None,
            Strategy::Ft => Some(&self.ft),
            Strategy::LpFt => Some(&self.lpft),
            Strategy::Daft => Some(&self.daft),
        }
    }
}

/// Training settings shared by every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub patience: Option<usize>,
    pub l2_grid: Vec<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let h = Hyper::default();
        Self {
            epochs: h.epochs,
            batch_size: h.batch_size,
            schedule: h.schedule,
            momentum: h.momentum,
            weight_decay: h.weight_decay,
            patience: h.patience,
            l2_grid: DEFAULT_L2_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    pub output_dir: PathBuf,
    pub precision: Precision,
    /// Run the two-step learning-rate sweep per cell instead of using `rates`.
    pub sweep: bool,
    /// Evaluate the corruption table for every cell.
    pub corruption: bool,
    /// OOD split used for the headline OOD accuracy.
    pub ood_split: String,
    pub histogram_bins: usize,
    pub rank_k: usize,
    pub task: TaskSpec,
    pub arch: ArchSpec,
    pub pretrain: PretrainConfig,
    pub train: TrainSettings,
    pub rates: StrategyRates,
    pub grids: StrategyGrids,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seeds: (0..10).collect(),
            strategies: Strategy::ALL.to_vec(),
            output_dir: PathBuf::from("runs/default"),
            precision: Precision::F64,
            sweep: false,
            corruption: false,
            ood_split: "strong".into(),
            histogram_bins: crate::diagnostics::DEFAULT_BINS,
            rank_k: 5,
            task: TaskSpec::default(),
            arch: ArchSpec::default(),
            pretrain: PretrainConfig::default(),
            train: TrainSettings::default(),
            rates: StrategyRates::default(),
            grids: StrategyGrids::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("strategy list is empty".into()));
        }
        let mut seen = self.strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.strategies.len() {
            return Err(Error::Config("strategy list has duplicates".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seed list has duplicates".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        self.task.validate()?;
        self.arch().validate()?;
        if self.arch.input_dim != self.task.feature_dim || self.arch.classes != self.task.class_count {
            return Err(Error::Config(format!(
                "arch is {}->{} but task has {} features and {} classes",
                self.arch.input_dim, self.arch.classes, self.task.feature_dim, self.task.class_count
            )));
        }
        if !self.task.ood_shifts.iter().any(|s| s.name == self.ood_split) {
            return Err(Error::Config(format!("no OOD split named {:?}", self.ood_split)));
        }
        for s in &self.strategies {
            let h = self.hyper(*s, 0);
            h.config(*s).validate()?;
            if *s == Strategy::Lp && h.l2_grid.is_empty() {
                return Err(Error::Config("train.l2_grid is empty".into()));
            }
        }
        Ok(())
    }

    /// Architecture with the experiment's precision applied.
    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            precision: self.precision,
            ..self.arch.clone()
        }
    }

    pub fn hyper(&self, strategy: Strategy, seed: u64) -> Hyper {
        let rates = self.rates.get(strategy).unwrap_or(LearningRates {
            eta_theta: 0.0,
            eta_w: 0.0,
        });
        Hyper {
            eta_theta: rates.eta_theta,
            eta_w: rates.eta_w,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            schedule: self.train.schedule,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            patience: self.train.patience,
            l2_grid: self.train.l2_grid.clone(),
            seed,
        }
    }

    /// SHA-256 of the canonical (sorted-key) JSON form of everything except
    /// `output_dir`. Key order and formatting of the source file do not matter.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        let canonical = serde_json::to_vec(&value)?;
        Ok(hex::encode(Sha256::digest(&canonical)))
    }
}

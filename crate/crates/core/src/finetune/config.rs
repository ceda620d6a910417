use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::schedule::Schedule;
use crate::error::{Error, Result};
use crate::nn::BnMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "LP")]
    Lp,
    #[serde(rename = "FT")]
    Ft,
    #[serde(rename = "LPFT")]
    LpFt,
    #[serde(rename = "DAFT")]
    Daft,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Lp, Strategy::Ft, Strategy::LpFt, Strategy::Daft];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Lp => "LP",
            Strategy::Ft => "FT",
            Strategy::LpFt => "LPFT",
            Strategy::Daft => "DAFT",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '_'], "");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (LP, FT, LPFT, DAFT)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    Zero,
    Random,
    /// Keep the head already installed (by a linear probe).
    FromLp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneConfig {
    pub strategy: Strategy,
    /// Feature-extractor learning rate.
    pub eta_theta: f64,
    /// Head learning rate.
    pub eta_w: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub head_init: HeadInit,
    pub bn_mode_during_ft: BnMode,
    pub bn_conversion: bool,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Stop after this many epochs without an ID-validation improvement.
    pub patience: Option<usize>,
    pub seed: u64,
}

pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

impl FineTuneConfig {
    /// The strategy's canonical row: head init, learning-rate coupling, BN
    /// mode during training and whether conversion runs first.
    ///
    /// | strategy | head init | LRs          | BN mode | conversion |
    /// |----------|-----------|--------------|---------|------------|
    /// | FT       | random    | eta_w = eta_theta | train | no      |
    /// | LPFT     | LP        | eta_w = eta_theta | test  | no      |
    /// | DAFT     | zero      | separate     | train   | yes        |
    ///
    /// For FT and LPFT `eta_w` is ignored and set to `eta_theta`. LP has no
    /// fine-tuning stage; its config freezes the feature extractor.
    pub fn for_strategy(strategy: Strategy, eta_theta: f64, eta_w: f64, seed: u64) -> Self {
        let base = Self {
            strategy,
            eta_theta,
            eta_w: eta_theta,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            schedule: Schedule::Cosine,
            head_init: HeadInit::Random,
            bn_mode_during_ft: BnMode::Train,
            bn_conversion: false,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: 0.0,
            patience: None,
            seed,
        };
        match strategy {
            Strategy::Ft => base,
            Strategy::LpFt => Self {
                head_init: HeadInit::FromLp,
                bn_mode_during_ft: BnMode::Test,
                ..base
            },
            Strategy::Daft => Self {
                eta_w,
                head_init: HeadInit::Zero,
                bn_conversion: true,
                ..base
            },
            Strategy::Lp => Self {
                eta_theta: 0.0,
                eta_w,
                head_init: HeadInit::FromLp,
                bn_mode_during_ft: BnMode::Test,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_theta", self.eta_theta), ("eta_w", self.eta_w)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let min_batch = if self.bn_mode_during_ft == BnMode::Train { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!(
                "batch size must be at least {min_batch} in BN {:?} mode",
                self.bn_mode_during_ft
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if let Schedule::Polynomial { power } = self.schedule {
            if !(power.is_finite() && power >= 0.0) {
                return Err(Error::Config("polynomial power must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Differences from the strategy's canonical row (see [`Self::for_strategy`]).
    pub fn table_deviations(&self) -> Vec<String> {
        let canon = Self::for_strategy(self.strategy, self.eta_theta, self.eta_w, self.seed);
        let mut out = Vec::new();
        if self.head_init != canon.head_init {
            out.push(format!("head_init {:?} (expected {:?})", self.head_init, canon.head_init));
        }
        if self.bn_mode_during_ft != canon.bn_mode_during_ft {
            out.push(format!("bn mode {:?} (expected {:?})", self.bn_mode_during_ft, canon.bn_mode_during_ft));
        }
        if self.bn_conversion != canon.bn_conversion {
            out.push(format!("bn_conversion {} (expected {})", self.bn_conversion, canon.bn_conversion));
        }
        if matches!(self.strategy, Strategy::Ft | Strategy::LpFt) && self.eta_w != self.eta_theta {
            out.push("eta_w differs from eta_theta".into());
        }
        out
    }
}

//! Two-step learning-rate sweep.
//!
//! Stage 1 sweeps `eta_theta` with the head rate pinned (1.0 by default).
//! Stage 2 keeps the winning `eta_theta` and sweeps `eta_w`. FT and LPFT tie
//! the two rates, so they only run stage 1. Every cell uses the same seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Strategy;
use super::strategy::{run_strategy, Hyper};
use super::trainer::TrainData;
use crate::error::{Error, Result};
use crate::nn::Network;

pub const FT_GRID: [f64; 8] = [0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4];
pub const LPFT_GRID: [f64; 6] = [1e-4, 3e-5, 1e-5, 3e-6, 1e-6, 3e-7];
pub const DAFT_THETA_GRID: [f64; 10] = [0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6];
pub const DAFT_HEAD_GRID: [f64; 4] = [10.0, 3.0, 0.3, 0.1];
pub const STAGE1_HEAD_LR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrids {
    pub eta_theta: Vec<f64>,
    /// Stage-2 values; the stage-1 head rate is always included as well.
    pub eta_w: Vec<f64>,
    pub stage1_eta_w: f64,
}

impl Default for SweepGrids {
    fn default() -> Self {
        Self::for_strategy(Strategy::Daft)
    }
}

impl SweepGrids {
    pub fn for_strategy(strategy: Strategy) -> Self {
        let eta_theta = match strategy {
            Strategy::Ft | Strategy::Lp => FT_GRID.to_vec(),
            Strategy::LpFt => LPFT_GRID.to_vec(),
            Strategy::Daft => DAFT_THETA_GRID.to_vec(),
        };
        Self {
            eta_theta,
            eta_w: DAFT_HEAD_GRID.to_vec(),
            stage1_eta_w: STAGE1_HEAD_LR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub eta_theta: f64,
    pub eta_w: f64,
    /// ID validation accuracy; `-inf` for a diverged run.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub strategy: Strategy,
    pub stage1: Vec<SweepCell>,
    pub chosen_eta_theta: f64,
    pub stage2: Vec<SweepCell>,
    pub chosen_eta_w: f64,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,eta_theta,eta_w,score,chosen\n");
        for (stage, cells) in [(1, &self.stage1), (2, &self.stage2)] {
            for c in cells {
                let chosen = if stage == 1 {
                    c.eta_theta == self.chosen_eta_theta
                } else {
                    c.eta_w == self.chosen_eta_w
                };
                s.push_str(&format!(
                    "{stage},{},{},{},{}\n",
                    c.eta_theta,
                    c.eta_w,
                    c.score,
                    u8::from(chosen)
                ));
            }
        }
        s
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config(format!("{name} grid is empty")));
    }
    if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config(format!("{name} grid has a negative or non-finite value")));
    }
    Ok(())
}

/// Highest score wins; ties go to the smaller learning rate.
fn pick(cells: &[SweepCell], lr: impl Fn(&SweepCell) -> f64) -> f64 {
    let mut best = &cells[0];
    for c in &cells[1..] {
        if c.score > best.score || (c.score == best.score && lr(c) < lr(best)) {
            best = c;
        }
    }
    lr(best)
}

/// Runs both stages with `scorer(eta_theta, eta_w)`. A [`Error::Diverged`]
/// from the scorer scores `-inf`; any other error aborts.
pub fn sweep_with_scorer<F>(strategy: Strategy, grids: &SweepGrids, scorer: F) -> Result<SweepResult>
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    if strategy == Strategy::Lp {
        return Err(Error::Config("LP has no learning-rate sweep".into()));
    }
    check_grid("eta_theta", &grids.eta_theta)?;
    let coupled = matches!(strategy, Strategy::Ft | Strategy::LpFt);
    if !coupled {
        check_grid("eta_w", &grids.eta_w)?;
    }
    let score = |theta: f64, w: f64| -> Result<SweepCell> {
        let score = match scorer(theta, w) {
            Ok(s) => s,
            Err(Error::Diverged { .. }) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        Ok(SweepCell {
            eta_theta: theta,
            eta_w: w,
            score,
        })
    };

    let stage1 = grids
        .eta_theta
        .par_iter()
        .map(|&t| score(t, if coupled { t } else { grids.stage1_eta_w }))
        .collect::<Result<Vec<_>>>()?;
    let chosen_eta_theta = pick(&stage1, |c| c.eta_theta);
    if coupled {
        return Ok(SweepResult {
            strategy,
            stage1,
            chosen_eta_theta,
            stage2: Vec::new(),
            chosen_eta_w: chosen_eta_theta,
        });
    }

    // The stage-1 head rate was already scored with the winning eta_theta.
    let reused = *stage1
        .iter()
        .find(|c| c.eta_theta == chosen_eta_theta)
        .expect("chosen from stage 1");
    let mut stage2 = grids
        .eta_w
        .par_iter()
        .filter(|&&w| w != grids.stage1_eta_w)
        .map(|&w| score(chosen_eta_theta, w))
        .collect::<Result<Vec<_>>>()?;
    stage2.push(reused);
    let chosen_eta_w = pick(&stage2, |c| c.eta_w);
    Ok(SweepResult {
        strategy,
        stage1,
        chosen_eta_theta,
        stage2,
        chosen_eta_w,
    })
}

/// Sweeps with real training runs scored by best ID validation accuracy.
pub fn sweep_learning_rates(
    pretrained: &Network,
    strategy: Strategy,
    data: TrainData<'_>,
    hyper: &Hyper,
    grids: &SweepGrids,
) -> Result<SweepResult> {
    sweep_with_scorer(strategy, grids, |eta_theta, eta_w| {
        let h = Hyper {
            eta_theta,
            eta_w,
            ..hyper.clone()
        };
        Ok(run_strategy(pretrained, strategy, data, &h)?.log.best_val_accuracy())
    })
}

//! Transfer strategies (LP, FT, LPFT, DAFT), the SGD trainer, schedules and
//! the two-step learning-rate sweep.

mod config;
mod linear_probe;
mod optimizer;
mod schedule;
mod strategy;
mod sweep;
mod trainer;

pub use config::{FineTuneConfig, HeadInit, Strategy, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_MOMENTUM};
pub use linear_probe::{fit_logistic, run_linear_probe, LinearProbeResult, LogisticFit, NewtonOptions, DEFAULT_L2_GRID};
pub use optimizer::Sgd;
pub use schedule::Schedule;
pub use strategy::{run_config, run_strategy, Hyper, StrategyOutcome};
pub use sweep::{
    sweep_learning_rates, sweep_with_scorer, SweepCell, SweepGrids, SweepResult, DAFT_HEAD_GRID,
    DAFT_THETA_GRID, FT_GRID, LPFT_GRID, STAGE1_HEAD_LR,
};
pub use trainer::{
    accuracy, init_head, mean_loss, run_fine_tune, run_fine_tune_observed, EpochLog, TrainData, TrainLog,
};

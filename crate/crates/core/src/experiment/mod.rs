//! End-to-end experiment orchestration used by the command-line tool.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! config.toml                          effective configuration
//! manifest.json                        artifact index, hashes, timestamps
//! pretrained/seed-<s>/checkpoint.json  plus pretrain log and task CSVs
//! cells/<STRATEGY>/seed-<s>/           checkpoint, logs, diagnostics, summary.json
//! summary.csv, comparison.{json,csv}   cross-strategy reports
//! ```

mod cell;
mod commands;
mod config;
mod manifest;

pub use cell::{run_cell, CellOptions, CellResult};
pub use commands::{
    cmd_convert, cmd_diagnose, cmd_finetune, cmd_pretrain, cmd_report, cmd_run, cmd_sweep, read_pretrain_report,
    CellFailure, CellSummary, ConvertReport, Layout, RunOutcome,
};
pub use config::{
    ExperimentConfig, LearningRates, StrategyGrids, StrategyRates, TrainSettings, CONFIG_SCHEMA_VERSION,
};
pub use manifest::{CellStatus, ManifestEntry, RunManifest};

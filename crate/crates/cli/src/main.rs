//! `daftlab` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
//! 3 IO failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use daftlab::diagnostics::Baseline;
use daftlab::experiment::{
    cmd_convert, cmd_diagnose, cmd_finetune, cmd_pretrain, cmd_report, cmd_run, cmd_sweep, ExperimentConfig,
};
use daftlab::finetune::Strategy;
use daftlab::{Error, Precision};

#[derive(Parser, Debug)]
#[command(name = "daftlab", version, about = "Batch-norm conversion and transfer-strategy experiments")]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed (overrides the config's seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    /// Output directory (overrides the config).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the task and pretrain a source checkpoint per seed.
    Pretrain,
    /// Pretrain if needed, then train and diagnose every (strategy, seed) cell.
    Run,
    /// Estimate target statistics on a CSV dataset and convert a checkpoint.
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with columns x0..x{d-1},label.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Reuse statistics saved by an earlier conversion.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Train one strategy from a checkpoint on the configured task.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        strategy: String,
    },
    /// Two-step learning-rate sweep for one strategy.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        strategy: String,
    },
    /// Feature similarity and relative change between two checkpoints.
    Diagnose {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = daftlab::diagnostics::DEFAULT_BINS)]
        bins: usize,
        /// Mark `before` as a post-conversion baseline in the report.
        #[arg(long)]
        post_conversion: bool,
    },
    /// Rebuild summary and comparison reports from finished cells.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(p) = cli.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(o) = &cli.output {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32, Error> {
    match &cli.command {
        Command::Pretrain => {
            let cfg = load_config(cli)?;
            for p in cmd_pretrain(&cfg)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let outcome = cmd_run(&cfg)?;
            println!(
                "cells: {} trained, {} resumed, {} failed",
                outcome.completed,
                outcome.skipped,
                outcome.failures.len()
            );
            for f in &outcome.failures {
                eprintln!("failed {}: {}", f.cell, f.error);
            }
            for p in &outcome.reports {
                println!("{}", p.display());
            }
            Ok(outcome.exit_code())
        }
        Command::Convert {
            checkpoint,
            data,
            out,
            batch_size,
            stats,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let r = cmd_convert(checkpoint, data, out, *batch_size, seed, stats.as_deref())?;
            println!(
                "converted {} layer(s); max test-mode discrepancy {:e} (tolerance {:e}){}",
                r.record.layers.len(),
                r.discrepancy,
                r.tolerance,
                if r.identity { "; identity conversion" } else { "" }
            );
            println!("{}", r.checkpoint.display());
            Ok(0)
        }
        Command::Finetune { checkpoint, strategy } => {
            let cfg = load_config(cli)?;
            let strategy: Strategy = strategy.parse()?;
            let out = cfg.output_dir.join("finetune").join(strategy.name());
            for p in cmd_finetune(&cfg, checkpoint, strategy, cfg.seeds[0], &out)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Sweep { checkpoint, strategy } => {
            let cfg = load_config(cli)?;
            let strategy: Strategy = strategy.parse()?;
            let out = cfg.output_dir.join("sweep").join(strategy.name());
            let r = cmd_sweep(&cfg, checkpoint, strategy, cfg.seeds[0], &out)?;
            println!("eta_theta = {}, eta_w = {}", r.chosen_eta_theta, r.chosen_eta_w);
            Ok(0)
        }
        Command::Diagnose {
            before,
            after,
            data,
            bins,
            post_conversion,
        } => {
            let out = cli.output.clone().unwrap_or_else(|| PathBuf::from("diagnose"));
            let baseline = if *post_conversion {
                Baseline::PostConversion
            } else {
                Baseline::PreConversion
            };
            for p in cmd_diagnose(before, after, data, *bins, baseline, &out)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Report => {
            let dir = match &cli.output {
                Some(o) => o.clone(),
                None => load_config(cli)?.output_dir,
            };
            for p in cmd_report(&dir)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

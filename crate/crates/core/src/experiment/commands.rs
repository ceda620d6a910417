use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{run_cell, CellOptions, CellResult};
use super::config::ExperimentConfig;
use super::manifest::{json_bytes, paths_relative, unix_now, write_file, CellStatus, ManifestEntry, RunManifest};
use crate::bn_convert::{convert_verified, estimate_target_statistics, preservation_tolerance, ConversionRecord, TargetStatistics};
use crate::data::{batches, load_csv, pretrain_source, save_csv, CsvSchema, DomainShiftTask, PretrainReport};
use crate::diagnostics::{feature_similarity, method_comparison, relative_change, Baseline, StrategyRun};
use crate::error::{Error, Result};
use crate::finetune::{run_strategy, sweep_learning_rates, Strategy, SweepResult, TrainData};
use crate::nn::{checkpoint, Network};

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn pretrained_dir(&self, seed: u64) -> PathBuf {
        self.root.join("pretrained").join(format!("seed-{seed}"))
    }

    pub fn pretrained_checkpoint(&self, seed: u64) -> PathBuf {
        self.pretrained_dir(seed).join("checkpoint.json")
    }

    pub fn cell_dir(&self, strategy: Strategy, seed: u64) -> PathBuf {
        self.root.join("cells").join(strategy.name()).join(format!("seed-{seed}"))
    }
}

fn cell_key(strategy: Strategy, seed: u64) -> String {
    format!("{}/seed-{seed}", strategy.name())
}

fn write_text(path: &Path, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    write_file(path, text.as_bytes())?;
    out.push(path.to_path_buf());
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T, out: &mut Vec<PathBuf>) -> Result<()> {
    write_file(path, &json_bytes(value)?)?;
    out.push(path.to_path_buf());
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Generates the task for `seed`, pretrains on its source split and writes
/// the checkpoint, training log and the task splits as CSV.
fn pretrain_one(cfg: &ExperimentConfig, layout: &Layout, seed: u64) -> Result<Vec<PathBuf>> {
    let task = DomainShiftTask::generate(&cfg.task, seed)?;
    let (net, report) = pretrain_source(&cfg.arch(), &task, &cfg.pretrain, seed)?;
    let dir = layout.pretrained_dir(seed);
    let mut out = Vec::new();
    let ckpt = layout.pretrained_checkpoint(seed);
    checkpoint::save(&net, &ckpt)?;
    out.push(ckpt);
    write_text(&dir.join("pretrain_log.csv"), &report.log.to_csv(), &mut out)?;
    write_json(&dir.join("pretrain_report.json"), &report, &mut out)?;
    let schema = CsvSchema::default_for(cfg.task.feature_dim);
    for (name, set) in task.splits() {
        let path = dir.join("data").join(format!("{name}.csv"));
        let parent = path.parent().expect("data dir");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        save_csv(set, &path, &schema)?;
        out.push(path);
    }
    Ok(out)
}

/// Pretrains one checkpoint per seed. Returns the checkpoint paths.
pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let hash = cfg.hash()?;
    let manifest = Mutex::new(RunManifest::open(&layout.manifest(), &hash)?);
    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    write_file(&layout.root.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let start = Instant::now();
            let artifacts = pretrain_one(cfg, &layout, seed)?;
            let mut m = manifest.lock().expect("manifest lock");
            m.pretrained.insert(
                format!("seed-{seed}"),
                ManifestEntry {
                    status: CellStatus::Done,
                    error: None,
                    exit_code: None,
                    artifacts: paths_relative(&layout.root, &artifacts),
                    finished_at: unix_now(),
                    wall_clock_secs: start.elapsed().as_secs_f64(),
                },
            );
            m.save(&layout.manifest())?;
            Ok(layout.pretrained_checkpoint(seed))
        })
        .collect()
}

fn load_task_and_checkpoint(cfg: &ExperimentConfig, layout: &Layout, seed: u64) -> Result<(DomainShiftTask, Network)> {
    let task = DomainShiftTask::generate(&cfg.task, seed)?;
    let net = checkpoint::load(&layout.pretrained_checkpoint(seed))?;
    Ok((task, net))
}

/// Per-cell summary written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub run: StrategyRun,
    pub eta_theta: f64,
    pub eta_w: f64,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub ood_accuracies: Vec<(String, f64)>,
    pub similarity_zero_vectors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversion_discrepancy: Option<f64>,
}

fn write_cell(layout: &Layout, cell: &CellResult, task: &DomainShiftTask) -> Result<Vec<PathBuf>> {
    let s = &cell.summary;
    let dir = layout.cell_dir(s.strategy, s.seed);
    let mut out = Vec::new();
    let ckpt = dir.join("checkpoint.json");
    checkpoint::save(&cell.network, &ckpt)?;
    out.push(ckpt);
    write_text(&dir.join("train_log.csv"), &cell.log.to_csv(), &mut out)?;
    write_text(
        &dir.join("similarity.csv"),
        &cell.similarity.to_csv(&task.target_test_id.ids, &task.target_test_id.labels),
        &mut out,
    )?;
    write_json(&dir.join("similarity.json"), &cell.similarity, &mut out)?;
    write_text(&dir.join("relative_change.csv"), &cell.relative.to_csv(), &mut out)?;
    write_json(&dir.join("relative_change.json"), &cell.relative, &mut out)?;
    if let Some(c) = &cell.conversion {
        write_json(&dir.join("conversion.json"), c, &mut out)?;
    }
    if let Some(sw) = &cell.sweep {
        write_text(&dir.join("sweep.csv"), &sw.to_csv(), &mut out)?;
        write_json(&dir.join("sweep.json"), sw, &mut out)?;
    }
    if let Some(t) = &cell.corruption {
        write_text(&dir.join("corruption.csv"), &t.to_csv(), &mut out)?;
        write_json(&dir.join("corruption.json"), t, &mut out)?;
    }
    let summary = CellSummary {
        run: s.clone(),
        eta_theta: cell.hyper.eta_theta,
        eta_w: cell.hyper.eta_w,
        best_epoch: cell.log.best_epoch,
        best_val_accuracy: cell.log.best_val_accuracy(),
        ood_accuracies: cell.ood_accuracies.clone(),
        similarity_zero_vectors: cell.similarity.zero_vectors,
        conversion_discrepancy: cell.conversion.as_ref().map(|c| c.max_test_mode_discrepancy),
    };
    // summary last: its presence marks the cell complete on disk
    write_json(&dir.join("summary.json"), &summary, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub reports: Vec<PathBuf>,
    pub failures: Vec<CellFailure>,
    pub skipped: usize,
    pub completed: usize,
}

impl RunOutcome {
    /// Process exit code: 0, or the code of the first failure.
    pub fn exit_code(&self) -> i32 {
        self.failures.first().map_or(0, |f| f.exit_code)
    }
}

/// Full pipeline over every (strategy, seed) cell. Missing pretrained
/// checkpoints are produced first. Cells already recorded as done in the
/// manifest (with artifacts present) are skipped. A failing cell is recorded
/// and the remaining cells still run.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let hash = cfg.hash()?;
    let manifest = Mutex::new(RunManifest::open(&layout.manifest(), &hash)?);
    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    write_file(&layout.root.join("config.toml"), cfg.to_toml()?.as_bytes())?;

    let missing: Vec<u64> = cfg
        .seeds
        .iter()
        .copied()
        .filter(|&s| {
            let m = manifest.lock().expect("manifest lock");
            !RunManifest::is_complete(m.pretrained.get(&format!("seed-{s}")), &layout.root)
        })
        .collect();
    if !missing.is_empty() {
        let sub = ExperimentConfig {
            seeds: missing,
            ..cfg.clone()
        };
        cmd_pretrain(&sub)?;
        *manifest.lock().expect("manifest lock") = RunManifest::open(&layout.manifest(), &hash)?;
    }

    let cells: Vec<(Strategy, u64)> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| cfg.strategies.iter().map(move |&s| (s, seed)))
        .collect();
    let results: Vec<(Strategy, u64, std::result::Result<(CellSummary, bool), Error>)> = cells
        .par_iter()
        .map(|&(strategy, seed)| {
            let key = cell_key(strategy, seed);
            let done = {
                let m = manifest.lock().expect("manifest lock");
                RunManifest::is_complete(m.cells.get(&key), &layout.root)
            };
            if done {
                let summary = read_json(&layout.cell_dir(strategy, seed).join("summary.json"));
                return (strategy, seed, summary.map(|s| (s, true)));
            }
            let start = Instant::now();
            let result = (|| -> Result<(CellSummary, Vec<PathBuf>)> {
                let (task, pretrained) = load_task_and_checkpoint(cfg, &layout, seed)?;
                let grids = if cfg.sweep { cfg.grids.get(strategy) } else { None };
                let opts = CellOptions {
                    ood_split: &cfg.ood_split,
                    bins: cfg.histogram_bins,
                    rank_k: cfg.rank_k,
                    corruption: cfg.corruption,
                };
                let cell = run_cell(&task, &pretrained, strategy, &cfg.hyper(strategy, seed), grids, opts)?;
                let artifacts = write_cell(&layout, &cell, &task)?;
                let summary: CellSummary = read_json(&layout.cell_dir(strategy, seed).join("summary.json"))?;
                Ok((summary, artifacts))
            })();
            let mut m = manifest.lock().expect("manifest lock");
            let (entry, out) = match result {
                Ok((summary, artifacts)) => (
                    ManifestEntry {
                        status: CellStatus::Done,
                        error: None,
                        exit_code: None,
                        artifacts: paths_relative(&layout.root, &artifacts),
                        finished_at: unix_now(),
                        wall_clock_secs: start.elapsed().as_secs_f64(),
                    },
                    Ok((summary, false)),
                ),
                Err(e) => (
                    ManifestEntry {
                        status: CellStatus::Failed,
                        error: Some(e.to_string()),
                        exit_code: Some(e.exit_code()),
                        artifacts: Vec::new(),
                        finished_at: unix_now(),
                        wall_clock_secs: start.elapsed().as_secs_f64(),
                    },
                    Err(e),
                ),
            };
            m.cells.insert(key, entry);
            let saved = m.save(&layout.manifest());
            match (out, saved) {
                (Ok(v), Ok(())) => (strategy, seed, Ok(v)),
                (Err(e), _) | (Ok(_), Err(e)) => (strategy, seed, Err(e)),
            }
        })
        .collect();

    let mut outcome = RunOutcome::default();
    let mut summaries = Vec::new();
    for (strategy, seed, r) in results {
        match r {
            Ok((s, skipped)) => {
                if skipped {
                    outcome.skipped += 1;
                } else {
                    outcome.completed += 1;
                }
                summaries.push(s);
            }
            Err(e) => outcome.failures.push(CellFailure {
                cell: cell_key(strategy, seed),
                error: e.to_string(),
                exit_code: e.exit_code(),
            }),
        }
    }
    outcome.reports = write_reports(&layout.root, &summaries, &mut outcome.failures)?;
    let mut m = manifest.into_inner().expect("manifest lock");
    m.reports = paths_relative(&layout.root, &outcome.reports);
    m.save(&layout.manifest())?;
    Ok(outcome)
}

fn summary_csv(summaries: &[CellSummary]) -> String {
    let mut s = String::from(
        "strategy,seed,eta_theta,eta_w,best_epoch,best_val_accuracy,id_accuracy,ood_accuracy,median_cosine,median_l2,mean_relative_change,mean_bn_stat_change\n",
    );
    for c in summaries {
        let r = &c.run;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.strategy,
            r.seed,
            c.eta_theta,
            c.eta_w,
            c.best_epoch,
            c.best_val_accuracy,
            r.id_accuracy,
            r.ood_accuracy,
            r.median_cosine,
            r.median_l2,
            r.mean_relative_change,
            r.mean_bn_stat_change
        ));
    }
    s
}

/// Writes `summary.csv` and, with two or more strategies, the comparison
/// reports. A comparison that cannot be formed is added to `failures`.
fn write_reports(root: &Path, summaries: &[CellSummary], failures: &mut Vec<CellFailure>) -> Result<Vec<PathBuf>> {
    let mut sorted = summaries.to_vec();
    sorted.sort_by(|a, b| (a.run.strategy, a.run.seed).cmp(&(b.run.strategy, b.run.seed)));
    let mut out = Vec::new();
    write_text(&root.join("summary.csv"), &summary_csv(&sorted), &mut out)?;
    let runs: Vec<StrategyRun> = sorted.iter().map(|s| s.run.clone()).collect();
    let strategies: std::collections::BTreeSet<_> = runs.iter().map(|r| r.strategy).collect();
    if strategies.len() >= 2 {
        match method_comparison(&runs) {
            Ok(c) => {
                write_json(&root.join("comparison.json"), &c, &mut out)?;
                write_text(&root.join("comparison.csv"), &c.to_csv(), &mut out)?;
            }
            Err(e) => failures.push(CellFailure {
                cell: "comparison".into(),
                error: e.to_string(),
                exit_code: e.exit_code(),
            }),
        }
    }
    Ok(out)
}

/// Rebuilds `summary.csv` and the comparison from the cell summaries on disk.
pub fn cmd_report(output_dir: &Path) -> Result<Vec<PathBuf>> {
    let cells = output_dir.join("cells");
    let mut summaries = Vec::new();
    let mut dirs: Vec<PathBuf> = Vec::new();
    for strat in fs::read_dir(&cells).map_err(|e| Error::io(&cells, e))? {
        let strat = strat.map_err(|e| Error::io(&cells, e))?.path();
        for seed in fs::read_dir(&strat).map_err(|e| Error::io(&strat, e))? {
            dirs.push(seed.map_err(|e| Error::io(&strat, e))?.path());
        }
    }
    dirs.sort();
    for d in dirs {
        let p = d.join("summary.json");
        if p.exists() {
            summaries.push(read_json::<CellSummary>(&p)?);
        }
    }
    if summaries.is_empty() {
        return Err(Error::EmptyDataset(format!("no cell summaries under {}", cells.display())));
    }
    let mut failures = Vec::new();
    let out = write_reports(output_dir, &summaries, &mut failures)?;
    if let Some(f) = failures.first() {
        return Err(Error::InvalidArgument(f.error.clone()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertReport {
    pub checkpoint: PathBuf,
    pub statistics: PathBuf,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub identity: bool,
    pub record: ConversionRecord,
}

/// Estimates target statistics on `dataset` (or reuses `cached_stats`),
/// converts, verifies and writes the converted checkpoint to `out` plus
/// `<out>.stats.json` and `<out>.report.json`. Nothing is written when the
/// verification fails.
pub fn cmd_convert(
    checkpoint_path: &Path,
    dataset: &Path,
    out: &Path,
    batch_size: usize,
    seed: u64,
    cached_stats: Option<&Path>,
) -> Result<ConvertReport> {
    let mut net = checkpoint::load(checkpoint_path)?;
    if net.bn_count() == 0 {
        return Err(Error::NoBatchNorm);
    }
    if batch_size < 2 {
        return Err(Error::Config("conversion batch size must be at least 2".into()));
    }
    let set = load_csv(dataset, &CsvSchema::default_for(net.input_dim))?;
    let probes: Vec<_> = batches(&set, batch_size, Some(crate::rng::derive_seed(seed, "bn-stats")), true)?
        .into_iter()
        .map(|b| b.x)
        .collect();
    if probes.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has fewer rows than one batch of {batch_size}",
            dataset.display()
        )));
    }
    let stats: TargetStatistics = match cached_stats {
        Some(p) => read_json(p)?,
        None => estimate_target_statistics(&net, &probes)?,
    };
    let record = convert_verified(&mut net, &stats, &probes)?;
    let stats_path = sibling(out, "stats.json");
    let report_path = sibling(out, "report.json");
    let report = ConvertReport {
        checkpoint: out.to_path_buf(),
        statistics: stats_path.clone(),
        discrepancy: record.max_test_mode_discrepancy,
        tolerance: preservation_tolerance(net.precision),
        identity: record.is_identity(),
        record,
    };
    checkpoint::save(&net, out)?;
    write_file(&stats_path, &json_bytes(&stats)?)?;
    write_file(&report_path, &json_bytes(&report)?)?;
    Ok(report)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Trains one strategy from `checkpoint_path` on the task for `seed` and
/// writes the checkpoint, training log and (DAFT) conversion record.
pub fn cmd_finetune(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
    strategy: Strategy,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let pretrained = checkpoint::load(checkpoint_path)?;
    let task = DomainShiftTask::generate(&cfg.task, seed)?;
    let data = TrainData {
        train: &task.target_train,
        val: &task.target_val,
    };
    let outcome = run_strategy(&pretrained, strategy, data, &cfg.hyper(strategy, seed))?;
    let mut out = Vec::new();
    let ckpt = out_dir.join("checkpoint.json");
    checkpoint::save(&outcome.network, &ckpt)?;
    out.push(ckpt);
    let baseline = out_dir.join("baseline.json");
    checkpoint::save(&outcome.baseline, &baseline)?;
    out.push(baseline);
    write_text(&out_dir.join("train_log.csv"), &outcome.log.to_csv(), &mut out)?;
    write_json(&out_dir.join("train_log.json"), &outcome.log, &mut out)?;
    if let Some(c) = &outcome.conversion {
        write_json(&out_dir.join("conversion.json"), c, &mut out)?;
    }
    Ok(out)
}

pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
    strategy: Strategy,
    seed: u64,
    out_dir: &Path,
) -> Result<SweepResult> {
    cfg.validate()?;
    let grids = cfg
        .grids
        .get(strategy)
        .ok_or_else(|| Error::Config("LP has no learning-rate sweep".into()))?;
    let pretrained = checkpoint::load(checkpoint_path)?;
    let task = DomainShiftTask::generate(&cfg.task, seed)?;
    let data = TrainData {
        train: &task.target_train,
        val: &task.target_val,
    };
    let result = sweep_learning_rates(&pretrained, strategy, data, &cfg.hyper(strategy, seed), grids)?;
    let mut out = Vec::new();
    write_text(&out_dir.join("sweep.csv"), &result.to_csv(), &mut out)?;
    write_json(&out_dir.join("sweep.json"), &result, &mut out)?;
    Ok(result)
}

/// Similarity and relative-change reports between two checkpoints on a CSV
/// dataset.
pub fn cmd_diagnose(
    before: &Path,
    after: &Path,
    dataset: &Path,
    bins: usize,
    baseline: Baseline,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let pre = checkpoint::load(before)?;
    let post = checkpoint::load(after)?;
    let set = load_csv(dataset, &CsvSchema::default_for(pre.input_dim))?;
    let sim = feature_similarity(&pre, &post, &set, bins, 5)?;
    let rel = relative_change(&pre, &post, baseline)?;
    let mut out = Vec::new();
    write_text(&out_dir.join("similarity.csv"), &sim.to_csv(&set.ids, &set.labels), &mut out)?;
    write_json(&out_dir.join("similarity.json"), &sim, &mut out)?;
    write_text(&out_dir.join("relative_change.csv"), &rel.to_csv(), &mut out)?;
    write_json(&out_dir.join("relative_change.json"), &rel, &mut out)?;
    Ok(out)
}

/// Pretraining summary file written next to each pretrained checkpoint.
pub fn read_pretrain_report(layout: &Layout, seed: u64) -> Result<PretrainReport> {
    read_json(&layout.pretrained_dir(seed).join("pretrain_report.json"))
}

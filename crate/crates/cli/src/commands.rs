//! The four subcommands as library functions, so tests can drive them
//! without spawning processes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use transduce::checkpoint::{Checkpoint, ModelKind};
use transduce::dataset::{generate_splits, Sidecar};
use transduce::evaluate::{evaluate_records, Predictor};
use transduce::metrics::{
    self, rank_correlation, Correlation, LengthKey, Metric, MetricsRecord, ModelTag, RecordLabels,
};
use transduce::training::{select_best_run, train_model, RunLog};
use transduce::{scaled_config, vocab, Dataset, Preset, Split, Task};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{digest_dataset, ExperimentManifest, RunEntry, RunStatus};
use crate::stubs::{self, StubKind};

/// Environment variable holding the number of runs trained concurrently.
pub const THREADS_ENV: &str = "TRANSDUCE_THREADS";

pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}

pub fn generate(task: Task, seed: u64, preset: Preset, out: &Path) -> CliResult<Sidecar> {
    let data = generate_splits(task, seed, &scaled_config(preset).data)?;
    data.write_dir(out)?;
    Ok(data.sidecar())
}

pub fn checkpoint_path(out: &Path, run: usize) -> PathBuf {
    out.join(format!("run{run}.ckpt"))
}

pub fn log_path(out: &Path, run: usize) -> PathBuf {
    out.join(format!("run{run}.log.json"))
}

fn train_one(cfg: &ExperimentConfig, data: &Dataset, run: usize) -> RunEntry {
    let seed = cfg.train.run_seed(run);
    let outcome = train_model::<f64>(&cfg.train, data, run).and_then(|(model, log)| {
        let meta = json!({
            "experiment": cfg.id,
            "task": cfg.train.task.to_string(),
            "run": run,
            "best_epoch": log.best_epoch,
            "best_dev_full_seq": log.best_dev_full_seq,
        });
        let ckpt = checkpoint_path(&cfg.out_dir, run);
        Checkpoint::from_seq2seq(&model, seed, meta).save(&ckpt)?;
        let log_file = log_path(&cfg.out_dir, run);
        let mut text = serde_json::to_string_pretty(&log)?;
        text.push('\n');
        fs::write(&log_file, text)?;
        Ok((ckpt, log_file))
    });
    match outcome {
        Ok((ckpt, log)) => RunEntry {
            run,
            seed,
            status: RunStatus::Trained,
            checkpoint: Some(ckpt),
            log: Some(log),
            error: None,
            results: None,
        },
        Err(e) => RunEntry {
            run,
            seed,
            status: RunStatus::Failed,
            checkpoint: None,
            log: None,
            error: Some(e.to_string()),
            results: None,
        },
    }
}

/// Trains every run of the experiment, writes checkpoints, logs and the
/// manifest. Runs that fail are recorded in the manifest; the first failure
/// is then returned as the command's error.
pub fn train(cfg: &ExperimentConfig, threads: usize) -> CliResult<ExperimentManifest> {
    let data = Dataset::read_dir(&cfg.data_dir)?;
    if data.task != cfg.train.task {
        return Err(CliError::Config(format!(
            "dataset in {} is for {}, config trains {}",
            cfg.data_dir.display(),
            data.task,
            cfg.train.task
        )));
    }
    let digests = digest_dataset(&cfg.data_dir)?;
    fs::create_dir_all(&cfg.out_dir)?;

    let run_ids: Vec<usize> = (0..cfg.train.runs).collect();
    let mut runs: Vec<RunEntry> = Vec::with_capacity(run_ids.len());
    for chunk in run_ids.chunks(threads.max(1)) {
        if chunk.len() == 1 {
            runs.push(train_one(cfg, &data, chunk[0]));
            continue;
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&r| { let data = &data; s.spawn(move || train_one(cfg, data, r)) }).collect();
            runs.extend(handles.into_iter().map(|h| h.join().expect("training thread panicked")));
        });
    }

    let manifest = ExperimentManifest {
        id: cfg.id.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        dataset_digests: digests,
        runs,
        best_run: None,
    };
    manifest.save(&ExperimentManifest::path_in(&cfg.out_dir))?;
    if let Some(failed) = manifest.runs.iter().find(|r| r.status == RunStatus::Failed) {
        let msg = format!("run {} failed: {}", failed.run, failed.error.as_deref().unwrap_or(""));
        return Err(if msg.contains("numeric") { CliError::Numeric(msg) } else { CliError::Data(msg) });
    }
    Ok(manifest)
}

/// What `evaluate` scores.
#[derive(Clone, Debug)]
pub enum ModelSource {
    Checkpoint(PathBuf),
    /// Every trained run listed in a manifest; the manifest is updated with
    /// result paths and the best run.
    Manifest(PathBuf),
    Stub(StubKind),
}

#[derive(Clone, Debug)]
pub struct EvaluateArgs {
    pub source: ModelSource,
    pub data_dir: PathBuf,
    pub splits: Vec<Split>,
    /// Recompute targets with this task before scoring.
    pub probe: Option<Task>,
    pub out: PathBuf,
    pub batch_size: usize,
}

fn score(
    predictor: &dyn Predictor,
    data: &Dataset,
    args: &EvaluateArgs,
    task: Task,
    variant: ModelTag,
    attention: bool,
    run: usize,
) -> CliResult<Vec<MetricsRecord>> {
    let mut records = Vec::new();
    for &split in &args.splits {
        let pairs = match args.probe {
            Some(t) => data.split(split).retarget(t)?,
            None => data.split(split).clone(),
        };
        let labels = RecordLabels {
            task,
            variant: variant.clone(),
            attention,
            run,
            split,
        };
        records.extend(evaluate_records(predictor, &pairs, &labels, args.batch_size)?);
    }
    Ok(records)
}

fn load_predictor(path: &Path) -> CliResult<(Box<dyn Predictor>, ModelTag, bool, usize)> {
    let ckpt = Checkpoint::<f64>::load(path)?;
    if ckpt.config.vocab != vocab::SIZE {
        return Err(CliError::Data(format!(
            "checkpoint vocabulary has {} symbols, expected {}",
            ckpt.config.vocab,
            vocab::SIZE
        )));
    }
    let run = ckpt.metadata.get("run").and_then(|r| r.as_u64()).unwrap_or(0) as usize;
    let tag = ModelTag::Cell(ckpt.config.variant);
    let attention = ckpt.config.attention;
    let predictor: Box<dyn Predictor> = match ckpt.kind {
        ModelKind::Seq2Seq => Box::new(ckpt.into_seq2seq()?),
        ModelKind::Tagger => Box::new(ckpt.into_tagger()?),
    };
    Ok((predictor, tag, attention, run))
}

fn aggregate_full_seq(records: &[MetricsRecord], split: Split) -> Option<f64> {
    records
        .iter()
        .find(|r| r.labels.split == split && r.length == LengthKey::Aggregate && r.metric == Metric::FullSeq)
        .map(|r| r.value)
}

/// Writes the metrics CSV and returns its records.
pub fn evaluate(args: &EvaluateArgs) -> CliResult<Vec<MetricsRecord>> {
    let data = Dataset::read_dir(&args.data_dir)?;
    let task = args.probe.unwrap_or(data.task);
    let records = match &args.source {
        ModelSource::Stub(kind) => {
            let stub = stubs::build(*kind, task)?;
            score(stub.as_ref(), &data, args, task, ModelTag::Stub(kind.to_string()), false, 0)?
        }
        ModelSource::Checkpoint(path) => {
            let (p, tag, attention, run) = load_predictor(path)?;
            score(p.as_ref(), &data, args, task, tag, attention, run)?
        }
        ModelSource::Manifest(path) => {
            let mut manifest = ExperimentManifest::load(path)?;
            manifest.verify_digests()?;
            let mut all = Vec::new();
            let mut per_run = Vec::new();
            for entry in manifest.runs.iter_mut().filter(|r| r.status == RunStatus::Trained) {
                let ckpt = entry
                    .checkpoint
                    .as_ref()
                    .ok_or_else(|| CliError::Data(format!("run {} has no checkpoint", entry.run)))?;
                let (p, tag, attention, _) = load_predictor(ckpt)?;
                let recs = score(p.as_ref(), &data, args, task, tag, attention, entry.run)?;
                per_run.push((
                    aggregate_full_seq(&recs, Split::Test).unwrap_or(0.0),
                    aggregate_full_seq(&recs, Split::Gen).unwrap_or(0.0),
                ));
                entry.results = Some(args.out.clone());
                all.extend(recs);
            }
            if !per_run.is_empty() && args.probe.is_none() {
                manifest.best_run = Some(select_best_run(&per_run)?);
            }
            manifest.save(path)?;
            all
        }
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    metrics::write_csv(fs::File::create(&args.out)?, &records)?;
    Ok(records)
}

/// One model configuration: task, cell, attention.
pub type ModelKey = (Task, ModelTag, bool);

/// Aggregate full-sequence accuracy of one model on one split, over its runs.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub task: Task,
    pub variant: ModelTag,
    pub attention: bool,
    pub split: Split,
    pub runs: usize,
    /// Run chosen by the weighted test/gen score.
    pub best_run: usize,
    pub best: f64,
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationRow {
    /// `train-test` or `train-gen`.
    pub pair: String,
    pub method: Correlation,
    pub models: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub aggregate: Vec<AggregateRow>,
    pub correlations: Vec<CorrelationRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summarizes aggregate full-sequence accuracy per model and split, and
/// correlates the per-model spread across runs between split pairs.
pub fn analyze_records(records: &[MetricsRecord]) -> CliResult<Analysis> {
    // model -> split -> run -> value
    let mut table: BTreeMap<ModelKey, BTreeMap<Split, BTreeMap<usize, f64>>> = BTreeMap::new();
    for r in records {
        if r.length != LengthKey::Aggregate || r.metric != Metric::FullSeq {
            continue;
        }
        let l = &r.labels;
        table
            .entry((l.task, l.variant.clone(), l.attention))
            .or_default()
            .entry(l.split)
            .or_default()
            .insert(l.run, r.value);
    }
    if table.is_empty() {
        return Err(CliError::Data("no aggregate full_seq records to analyze".into()));
    }

    let mut aggregate = Vec::new();
    let mut spread: BTreeMap<Split, Vec<Option<f64>>> = BTreeMap::new();
    for ((task, variant, attention), splits) in &table {
        let mut runs: Vec<usize> = splits.values().flat_map(|m| m.keys().copied()).collect();
        runs.sort_unstable();
        runs.dedup();
        let value = |s: Split, run: usize| splits.get(&s).and_then(|m| m.get(&run)).copied().unwrap_or(0.0);
        let scored: Vec<(f64, f64)> = runs.iter().map(|&r| (value(Split::Test, r), value(Split::Gen, r))).collect();
        let best_run = runs[select_best_run(&scored)?];
        for split in Split::ALL {
            let Some(by_run) = splits.get(&split) else {
                spread.entry(split).or_default().push(None);
                continue;
            };
            let values: Vec<f64> = by_run.values().copied().collect();
            let (mean, std) = mean_std(&values);
            spread.entry(split).or_default().push(Some(std));
            aggregate.push(AggregateRow {
                task: *task,
                variant: variant.clone(),
                attention: *attention,
                split,
                runs: values.len(),
                best_run,
                best: value(split, best_run),
                mean,
                std,
            });
        }
    }

    let mut correlations = Vec::new();
    for other in [Split::Test, Split::Gen] {
        let (xs, ys): (Vec<f64>, Vec<f64>) = match (spread.get(&Split::Train), spread.get(&other)) {
            (Some(a), Some(b)) => a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip(),
            _ => continue,
        };
        if xs.len() < 2 {
            continue;
        }
        for method in [Correlation::Kendall, Correlation::Spearman] {
            correlations.push(CorrelationRow {
                pair: format!("train-{}", other.name()),
                method,
                models: xs.len(),
                value: rank_correlation(&xs, &ys, method)?,
            });
        }
    }
    Ok(Analysis { aggregate, correlations })
}

fn method_name(m: Correlation) -> &'static str {
    match m {
        Correlation::Kendall => "kendall",
        Correlation::Spearman => "spearman",
    }
}

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const CORRELATION_FILE: &str = "correlations.csv";
pub const TABLE_FILE: &str = "aggregate.txt";

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

/// Reads result CSVs, writes `aggregate.csv`, `correlations.csv` and a text
/// table into `out_dir`.
pub fn analyze(csvs: &[PathBuf], out_dir: &Path) -> CliResult<Analysis> {
    let mut records = Vec::new();
    for path in csvs {
        let file = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        records.extend(
            metrics::read_csv(file).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        );
    }
    let analysis = analyze_records(&records)?;
    fs::create_dir_all(out_dir)?;

    let mut w = csv::Writer::from_path(out_dir.join(AGGREGATE_FILE)).map_err(csv_err)?;
    w.write_record(["task", "variant", "attention", "split", "runs", "best_run", "best", "mean", "std"])
        .map_err(csv_err)?;
    for r in &analysis.aggregate {
        w.write_record([
            r.task.to_string(),
            r.variant.to_string(),
            r.attention.to_string(),
            r.split.name().to_string(),
            r.runs.to_string(),
            r.best_run.to_string(),
            metrics::format_value(r.best),
            metrics::format_value(r.mean),
            metrics::format_value(r.std),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join(CORRELATION_FILE)).map_err(csv_err)?;
    w.write_record(["pair", "method", "models", "value"]).map_err(csv_err)?;
    for c in &analysis.correlations {
        w.write_record([
            c.pair.clone(),
            method_name(c.method).to_string(),
            c.models.to_string(),
            metrics::format_value(c.value),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    fs::write(out_dir.join(TABLE_FILE), render_table(&analysis))?;
    Ok(analysis)
}

/// Best-run aggregate full-sequence accuracy in percent: one block of rows
/// per task (one row per split), attentional columns before attention-less.
pub fn render_table(analysis: &Analysis) -> String {
    let mut columns: Vec<(bool, ModelTag)> = analysis
        .aggregate
        .iter()
        .map(|r| (r.attention, r.variant.clone()))
        .collect();
    columns.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    columns.dedup();
    let mut tasks: Vec<Task> = analysis.aggregate.iter().map(|r| r.task).collect();
    tasks.dedup();

    let mut out = format!("{:<22}{:<7}", "task", "split");
    for (attn, v) in &columns {
        let head = format!("{}{}", if *attn { "attn " } else { "" }, v);
        out.push_str(&format!("{head:>16}"));
    }
    out.push('\n');
    for task in tasks {
        for split in Split::ALL {
            let cells: Vec<Option<f64>> = columns
                .iter()
                .map(|(attn, v)| {
                    analysis
                        .aggregate
                        .iter()
                        .find(|r| r.task == task && r.split == split && r.attention == *attn && &r.variant == v)
                        .map(|r| r.best)
                })
                .collect();
            if cells.iter().all(Option::is_none) {
                continue;
            }
            out.push_str(&format!("{:<22}{:<7}", task.to_string(), split.name()));
            for c in cells {
                match c {
                    Some(v) => out.push_str(&format!("{:>16.2}", 100.0 * v)),
                    None => out.push_str(&format!("{:>16}", "-")),
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Reads a run log written by `train`.
pub fn read_log(path: &Path) -> CliResult<RunLog> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

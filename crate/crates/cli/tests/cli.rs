use std::fs;
use std::path::Path;
use std::process::Command;

use transduce::metrics::{self, rank_correlation, Correlation, LengthKey, Metric, MetricsRecord, ModelTag, RecordLabels};
use transduce::{scaled_config, Preset, Split, Task, TrainConfig, Variant};
use transduce_cli::commands::{self, analyze, EvaluateArgs, ModelSource};
use transduce_cli::config::{ExperimentConfig, CONFIG_VERSION};
use transduce_cli::manifest::{dataset_files, ExperimentManifest, RunStatus};
use transduce_cli::stubs::StubKind;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transduce"))
}

fn generate(dir: &Path, task: Task) {
    commands::generate(task, 7, Preset::DeskScale, dir).unwrap();
}

fn small_experiment(root: &Path, runs: usize) -> ExperimentConfig {
    let data_dir = root.join("data");
    generate(&data_dir, Task::Reversal);
    let mut train = TrainConfig::from_preset(&scaled_config(Preset::DeskScale), Task::Reversal, Variant::Gru, true, 3);
    train.hidden = 6;
    train.embedding = 4;
    train.max_epochs = 2;
    train.eval_interval = 1;
    train.batch_size = 200;
    train.runs = runs;
    ExperimentConfig { version: CONFIG_VERSION, id: "small".into(), data_dir, out_dir: root.join("out"), train }
}

#[test]
fn generate_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for dir in [&a, &b] {
        let status = bin()
            .args(["generate", "--task", "reversal", "--preset", "desk_scale", "--seed", "7", "--out"])
            .arg(dir)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let files = dataset_files();
    assert_eq!(files.len(), 5);
    for f in files {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
    }
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(side["totals"]["train"], 7 * 200);
    assert_eq!(side["totals"]["gen"], 4 * 1000);
}

#[test]
fn main_preset_matches_reported_sizes() {
    // Reported sizes: 10,000 train, 10,000 dev, 50,000 test, 100,000 gen pairs.
    let c = scaled_config(Preset::Main).data;
    let totals: Vec<usize> = Split::ALL.iter().map(|&s| c.total(s)).collect();
    assert_eq!(totals, [10_000, 10_000, 50_000, 100_000]);
}

#[test]
fn config_errors_exit_with_code_two() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_experiment(root.path(), 1);
    let mut json: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    json["train"]["momentum"] = 0.9.into();
    let path = root.path().join("bad.json");
    fs::write(&path, json.to_string()).unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
    let out = bin().arg("train").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    json["train"].as_object_mut().unwrap().remove("momentum");
    json["version"] = 99.into();
    fs::write(&path, json.to_string()).unwrap();
    assert_eq!(bin().arg("train").arg("--config").arg(&path).status().unwrap().code(), Some(2));
}

#[test]
fn train_writes_runs_and_a_verifiable_manifest() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_experiment(root.path(), 2);
    let manifest = commands::train(&cfg, 2).unwrap();
    assert_eq!(manifest.runs.len(), 2);
    for r in &manifest.runs {
        assert_eq!(r.status, RunStatus::Trained);
        assert!(r.checkpoint.as_ref().unwrap().exists());
        let log = commands::read_log(r.log.as_ref().unwrap()).unwrap();
        assert_eq!(log.run, r.run);
        assert_eq!(log.seed, r.seed);
    }
    assert_ne!(manifest.runs[0].seed, manifest.runs[1].seed);
    let path = ExperimentManifest::path_in(&cfg.out_dir);
    let loaded = ExperimentManifest::load(&path).unwrap();
    assert_eq!(loaded, manifest);
    loaded.verify_digests().unwrap();

    let csv = root.path().join("results.csv");
    let status = bin()
        .args(["evaluate", "--manifest"])
        .arg(&path)
        .arg("--data-dir")
        .arg(&cfg.data_dir)
        .args(["--splits", "test,gen", "--out"])
        .arg(&csv)
        .status()
        .unwrap();
    assert!(status.success());
    let records = metrics::read_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(records.len(), 2 * 3 * ((7 + 1) + (4 + 1)));
    let after = ExperimentManifest::load(&path).unwrap();
    assert!(after.best_run.is_some());
    assert!(after.runs.iter().all(|r| r.results.as_deref() == Some(csv.as_path())));

    // Changing a data file breaks the digest check: data error.
    let test_file = cfg.data_dir.join("test.tsv");
    let mut text = fs::read_to_string(&test_file).unwrap();
    text.push_str("ab\tba\n");
    fs::write(&test_file, text).unwrap();
    assert!(after.verify_digests().is_err());
    let out = bin()
        .args(["evaluate", "--manifest"])
        .arg(&path)
        .arg("--data-dir")
        .arg(&cfg.data_dir)
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn checkpoint_evaluation_matches_row_count() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_experiment(root.path(), 1);
    commands::train(&cfg, 1).unwrap();
    let records = commands::evaluate(&EvaluateArgs {
        source: ModelSource::Checkpoint(commands::checkpoint_path(&cfg.out_dir, 0)),
        data_dir: cfg.data_dir.clone(),
        splits: Split::ALL.to_vec(),
        probe: None,
        out: root.path().join("ckpt.csv"),
        batch_size: 300,
    })
    .unwrap();
    let lengths = 3 * 7 + 4;
    assert_eq!(records.len(), (lengths + 4) * 3);
    assert!(records.iter().all(|r| r.labels.variant == ModelTag::Cell(Variant::Gru) && r.labels.attention));

    fs::write(root.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = bin()
        .args(["evaluate", "--checkpoint"])
        .arg(root.path().join("junk.ckpt"))
        .arg("--data-dir")
        .arg(&cfg.data_dir)
        .arg("--out")
        .arg(root.path().join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn stubs_score_as_expected() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    generate(&data, Task::TotalReduplication);
    let run = |stub: &str| {
        commands::evaluate(&EvaluateArgs {
            source: ModelSource::Stub(stub.parse::<StubKind>().unwrap()),
            data_dir: data.clone(),
            splits: vec![Split::Test, Split::Gen],
            probe: None,
            out: root.path().join(format!("{stub}.csv")),
            batch_size: 1000,
        })
        .unwrap()
    };
    assert!(run("oracle").iter().all(|r| r.value == 1.0));
    let constant = run("constant:q");
    assert!(constant.iter().filter(|r| r.metric == Metric::FullSeq).all(|r| r.value == 0.0));
    assert!(constant.iter().all(|r| r.labels.variant == ModelTag::Stub("constant:q".into())));
    assert!("constant:Q".parse::<StubKind>().is_err());
    assert!("sorcerer".parse::<StubKind>().is_err());
}

fn record(task: Task, variant: Variant, attention: bool, run: usize, split: Split, value: f64) -> MetricsRecord {
    MetricsRecord {
        labels: RecordLabels { task, variant: variant.into(), attention, run, split },
        length: LengthKey::Aggregate,
        metric: Metric::FullSeq,
        value,
    }
}

fn write(path: &Path, records: &[MetricsRecord]) {
    metrics::write_csv(fs::File::create(path).unwrap(), records).unwrap();
}

#[test]
fn analyze_single_perfect_run() {
    let root = tempfile::tempdir().unwrap();
    let records: Vec<_> = Split::ALL
        .iter()
        .map(|&s| record(Task::Identity, Variant::Lstm, true, 0, s, 1.0))
        .collect();
    let csv = root.path().join("r.csv");
    write(&csv, &records);
    let a = analyze(&[csv], &root.path().join("summary")).unwrap();
    assert_eq!(a.aggregate.len(), 4);
    assert!(a.aggregate.iter().all(|r| r.best == 1.0 && r.mean == 1.0 && r.std == 0.0));
    assert!(root.path().join("summary").join(commands::AGGREGATE_FILE).exists());
}

fn brute_kendall(x: &[f64], y: &[f64]) -> f64 {
    let sign = |v: f64| (v > 0.0) as i32 - (v < 0.0) as i32;
    let (mut s, mut nx, mut ny) = (0i32, 0i32, 0i32);
    for i in 0..x.len() {
        for j in 0..i {
            let (a, b) = (sign(x[i] - x[j]), sign(y[i] - y[j]));
            s += a * b;
            nx += a.abs();
            ny += b.abs();
        }
    }
    s as f64 / ((nx as f64) * (ny as f64)).sqrt()
}

fn population_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn analyze_three_runs_against_brute_force() {
    let root = tempfile::tempdir().unwrap();
    // Four models, three runs each, arbitrary accuracies.
    let values: [[[f64; 3]; 3]; 4] = [
        [[0.90, 0.95, 1.00], [0.80, 0.85, 0.95], [0.10, 0.40, 0.20]],
        [[0.99, 0.99, 0.98], [0.97, 0.96, 0.99], [0.00, 0.30, 0.05]],
        [[0.50, 0.70, 0.60], [0.40, 0.65, 0.55], [0.02, 0.01, 0.03]],
        [[0.30, 0.31, 0.29], [0.20, 0.22, 0.21], [0.00, 0.00, 0.10]],
    ];
    let models = [
        (Task::Identity, Variant::Srnn, true),
        (Task::Identity, Variant::Gru, false),
        (Task::Reversal, Variant::Lstm, true),
        (Task::Reversal, Variant::Srnn, false),
    ];
    let splits = [Split::Train, Split::Test, Split::Gen];
    let mut records = Vec::new();
    for (m, &(task, variant, attention)) in models.iter().enumerate() {
        for (s, &split) in splits.iter().enumerate() {
            for run in 0..3 {
                records.push(record(task, variant, attention, run, split, values[m][s][run]));
            }
        }
    }
    let csv = root.path().join("runs.csv");
    write(&csv, &records);
    let a = analyze(&[csv], root.path()).unwrap();

    let stds = |s: usize| -> Vec<f64> { values.iter().map(|m| population_std(&m[s])).collect() };
    let (train, test, gen) = (stds(0), stds(1), stds(2));
    for (pair, other) in [("train-test", &test), ("train-gen", &gen)] {
        let kendall = a.correlations.iter().find(|c| c.pair == pair && c.method == Correlation::Kendall).unwrap();
        assert!((kendall.value - brute_kendall(&train, other)).abs() < 1e-12);
        let spearman = a.correlations.iter().find(|c| c.pair == pair && c.method == Correlation::Spearman).unwrap();
        assert_eq!(spearman.value, rank_correlation(&train, other, Correlation::Spearman).unwrap());
        assert_eq!(kendall.models, 4);
    }
    // Weighted scores for model 0 are 0.38, 0.58 and 0.50, so run 1 wins.
    let row = a.aggregate.iter().find(|r| r.variant == ModelTag::Cell(Variant::Srnn) && r.attention && r.split == Split::Gen).unwrap();
    assert_eq!(row.best_run, 1);
    assert_eq!(row.best, 0.40);

    let table = commands::render_table(&a);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows[..3].iter().all(|r| r.starts_with("identity")));
    assert!(table.lines().next().unwrap().find("attn").unwrap() < table.lines().next().unwrap().rfind("srnn").unwrap());
}

#[test]
fn analyze_reports_bad_rows_with_line_numbers() {
    let root = tempfile::tempdir().unwrap();
    let csv = root.path().join("bad.csv");
    fs::write(&csv, "task,variant,attention,run,split,length,metric,value\nidentity,gru,true,0,test,aggregate,full_seq,1.5\n").unwrap();
    let err = analyze(&[csv.clone()], root.path()).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    let out = bin().args(["analyze", "--out-dir"]).arg(root.path()).arg(&csv).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

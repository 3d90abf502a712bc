use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transduce::training::TrainConfig;
use transduce::{Preset, Split, Task, Variant};
use transduce_cli::commands::{self, EvaluateArgs, ModelSource};
use transduce_cli::config::{ExperimentConfig, CONFIG_VERSION};
use transduce_cli::stubs::StubKind;
use transduce_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "transduce", version, about = "String transduction experiments with RNN encoder-decoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/dev/test/gen splits for one task.
    Generate {
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "main")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train all runs of an experiment.
    Train(TrainArgs),
    /// Score a checkpoint, every run of a manifest, or a reference stub.
    Evaluate {
        #[arg(long, conflicts_with_all = ["manifest", "stub"])]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "stub")]
        manifest: Option<PathBuf>,
        /// oracle, echo, or constant:<letter>
        #[arg(long)]
        stub: Option<StubKind>,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "train,dev,test,gen")]
        splits: Vec<Split>,
        /// Re-create targets with this task, e.g. kcopy:3.
        #[arg(long)]
        probe: Option<Task>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        batch_size: usize,
    },
    /// Summarize result CSVs into aggregate tables and rank correlations.
    Analyze {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment config; flags below override its training fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Base hyperparameters when no config file is given.
    #[arg(long, default_value = "main")]
    preset: Preset,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    attention: Option<bool>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embedding: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
}

fn missing(flag: &str) -> CliError {
    CliError::Config(format!("--{flag} is required without --config"))
}

fn experiment(a: TrainArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let task = a.task.ok_or_else(|| missing("task"))?;
            let variant = a.variant.ok_or_else(|| missing("variant"))?;
            let p = transduce::scaled_config(a.preset);
            ExperimentConfig {
                version: CONFIG_VERSION,
                id: a.id.clone().unwrap_or_else(|| format!("{task}-{variant}")),
                data_dir: a.data_dir.clone().ok_or_else(|| missing("data-dir"))?,
                out_dir: a.out_dir.clone().ok_or_else(|| missing("out-dir"))?,
                train: TrainConfig::from_preset(&p, task, variant, a.attention.unwrap_or(false), 0),
            }
        }
    };
    let t = &mut cfg.train;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { t.$field = v; })* };
    }
    set!(task, variant, attention, hidden, embedding, learning_rate, l2, clip, max_epochs, eval_interval, batch_size, seed, runs);
    if let Some(id) = a.id {
        cfg.id = id;
    }
    if let Some(d) = a.data_dir {
        cfg.data_dir = d;
    }
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { task, seed, preset, out } => {
            let side = commands::generate(task, seed, preset, &out)?;
            for (split, n) in &side.totals {
                println!("{split}\t{n}");
            }
        }
        Command::Train(args) => {
            let cfg = experiment(args)?;
            let manifest = commands::train(&cfg, commands::threads_from_env())?;
            println!("{}", ExperimentConfig::to_json(&manifest.config));
            println!("wrote {}", transduce_cli::manifest::ExperimentManifest::path_in(&cfg.out_dir).display());
        }
        Command::Evaluate { checkpoint, manifest, stub, data_dir, splits, probe, out, batch_size } => {
            let source = match (checkpoint, manifest, stub) {
                (Some(c), None, None) => ModelSource::Checkpoint(c),
                (None, Some(m), None) => ModelSource::Manifest(m),
                (None, None, Some(s)) => ModelSource::Stub(s),
                _ => return Err(CliError::Config("give one of --checkpoint, --manifest, --stub".into())),
            };
            let records = commands::evaluate(&EvaluateArgs { source, data_dir, splits, probe, out: out.clone(), batch_size })?;
            println!("wrote {} records to {}", records.len(), out.display());
        }
        Command::Analyze { out_dir, csvs } => {
            let analysis = commands::analyze(&csvs, &out_dir)?;
            print!("{}", commands::render_table(&analysis));
            for c in &analysis.correlations {
                println!("{} {:?}: {:.4} over {} models", c.pair, c.method, c.value, c.models);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("transduce: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

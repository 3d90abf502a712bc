//! Teacher-forced training with periodic greedy evaluation, stopping rules,
//! best-checkpoint tracking and best-run selection.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cells::Variant;
use crate::dataset::{Dataset, DatasetSplit, Split};
use crate::error::{Error, Result};
use crate::evaluate::{self, Predictor};
use crate::graph::{Eval, Graph, ParamStore};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::presets::PresetConfig;
use crate::rng::{mix, Rng};
use crate::scalar::Scalar;
use crate::seq2seq::{ModelConfig, Seq2SeqModel};
use crate::tagger::TaggerModel;
use crate::tape::Tape;
use crate::tasks::Task;
use crate::vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub variant: Variant,
    pub attention: bool,
    pub hidden: usize,
    pub embedding: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub clip: f64,
    pub max_epochs: usize,
    pub eval_interval: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub runs: usize,
}

impl TrainConfig {
    pub fn from_preset(p: &PresetConfig, task: Task, variant: Variant, attention: bool, seed: u64) -> Self {
        TrainConfig {
            task,
            variant,
            attention,
            hidden: p.hidden,
            embedding: p.embedding,
            learning_rate: p.learning_rate,
            l2: p.l2,
            clip: p.clip,
            max_epochs: p.max_epochs,
            eval_interval: p.eval_interval,
            batch_size: p.batch_size,
            seed,
            runs: p.runs,
        }
    }

    /// The setup used for the few-hundred-parameter identity taggers.
    pub fn tiny_tagger(variant: Variant, seed: u64) -> Self {
        TrainConfig {
            task: Task::Identity,
            variant,
            attention: false,
            hidden: 4,
            embedding: 3,
            learning_rate: 1e-2,
            l2: 1e-5,
            clip: 1.0,
            max_epochs: 500,
            eval_interval: 10,
            batch_size: 1000,
            seed,
            runs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("embedding", self.embedding),
            ("max_epochs", self.max_epochs),
            ("eval_interval", self.eval_interval),
            ("batch_size", self.batch_size),
            ("runs", self.runs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let rates = [("learning_rate", self.learning_rate), ("clip", self.clip)];
        if let Some((name, _)) = rates.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.variant, self.attention, self.hidden, self.embedding)
    }

    /// Tagger sizes. A tagger reads and writes letters only, so it carries no
    /// rows for the two markers.
    pub fn tagger_config(&self) -> ModelConfig {
        ModelConfig {
            vocab: vocab::LETTERS,
            ..self.model_config()
        }
    }

    /// Seed of run `run`; runs are independent streams of the config seed.
    pub fn run_seed(&self, run: usize) -> u64 {
        mix(self.seed ^ mix(run as u64 + 1))
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate, self.l2)
    }
}

/// Pair indices of `split` grouped into same-length batches of at most
/// `batch_size`, with pairs and batches shuffled.
pub fn make_batches(split: &DatasetSplit, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, p) in split.pairs.iter().enumerate() {
        by_len.entry(p.input.len()).or_default().push(i);
    }
    let mut batches = Vec::new();
    for mut idx in by_len.into_values() {
        rng.shuffle(&mut idx);
        batches.extend(idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    rng.shuffle(&mut batches);
    batches
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochCap,
    DevPerfect,
    Converged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub epoch: usize,
    /// Mean of the epoch's teacher-forced batch losses.
    pub train_loss: f64,
    pub dev_loss: f64,
    pub train_full_seq: f64,
    pub dev_full_seq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: TrainConfig,
    pub run: usize,
    pub seed: u64,
    pub evaluations: Vec<EvalRow>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_dev_full_seq: f64,
    pub epochs_used: usize,
    pub parameters: usize,
    /// Excluded from [`RunLog::deterministic_json`].
    pub wall_time_secs: f64,
}

impl RunLog {
    /// JSON with the wall-clock field zeroed, for reproducibility checks.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.wall_time_secs = 0.0;
        Ok(serde_json::to_string_pretty(&copy)?)
    }
}

/// What the training loop needs from a model.
pub trait Trainable<T: Scalar>: Predictor + Clone {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    /// Mean per-token cross-entropy of a teacher-forced batch.
    fn batch_loss<G: Graph<T>>(&self, g: &mut G, sources: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<G::Node>;
}

impl<T: Scalar> Trainable<T> for Seq2SeqModel<T> {
    fn params(&self) -> &ParamStore<T> {
        Seq2SeqModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        Seq2SeqModel::params_mut(self)
    }

    fn batch_loss<G: Graph<T>>(&self, g: &mut G, sources: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<G::Node> {
        self.loss(g, sources, targets)
    }
}

impl<T: Scalar> Trainable<T> for TaggerModel<T> {
    fn params(&self) -> &ParamStore<T> {
        TaggerModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        TaggerModel::params_mut(self)
    }

    fn batch_loss<G: Graph<T>>(&self, g: &mut G, sources: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<G::Node> {
        self.loss(g, sources, targets)
    }
}

struct Encoded {
    sources: Vec<Vec<usize>>,
    targets: Vec<Vec<usize>>,
}

fn encode_split<P: Predictor>(model: &P, split: &DatasetSplit) -> Result<Encoded> {
    Ok(Encoded {
        sources: split.pairs.iter().map(|p| model.source_indices(&p.input)).collect::<Result<_>>()?,
        targets: split.pairs.iter().map(|p| model.target_indices(&p.target)).collect::<Result<_>>()?,
    })
}

fn gather(v: &[Vec<usize>], idx: &[usize]) -> Vec<Vec<usize>> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// One optimizer step on a batch. Returns the batch loss before the update.
pub fn train_step<T: Scalar, M: Trainable<T>>(
    model: &mut M,
    sources: &[Vec<usize>],
    targets: &[Vec<usize>],
    adam: &AdamConfig,
    clip: f64,
    state: &mut AdamState<T>,
) -> Result<T> {
    let (loss, mut grads) = {
        let mut tape = Tape::new(model.params());
        let root = model.batch_loss(&mut tape, sources, targets)?;
        let loss = tape.value(&root).item()?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss is {loss}")));
        }
        (loss, tape.backward(root)?.into_params())
    };
    clip_global_norm(&mut grads, T::lit(clip))?;
    adam_step(model.params_mut(), &grads, state, adam)?;
    Ok(loss)
}

fn mean_loss<T: Scalar, M: Trainable<T>>(model: &M, data: &Encoded, batch_size: usize) -> Result<f64> {
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, s) in data.sources.iter().enumerate() {
        by_len.entry(s.len()).or_default().push(i);
    }
    let (mut total, mut tokens) = (0.0, 0usize);
    for idx in by_len.values() {
        for chunk in idx.chunks(batch_size.max(1)) {
            let targets = gather(&data.targets, chunk);
            let n: usize = targets.iter().map(Vec::len).sum();
            let mut g = Eval::new(model.params());
            let l = model.batch_loss(&mut g, &gather(&data.sources, chunk), &targets)?;
            total += l.item()?.to_f64().unwrap_or(f64::NAN) * n as f64;
            tokens += n;
        }
    }
    Ok(total / tokens as f64)
}

/// Trains `model` on the train split, evaluating train and dev by greedy
/// decoding. Returns the model as it was at the best dev evaluation (earliest
/// on ties) with the run log.
pub fn train_loop<T: Scalar, M: Trainable<T>>(
    mut model: M,
    config: &TrainConfig,
    train: &DatasetSplit,
    dev: &DatasetSplit,
    run: usize,
) -> Result<(M, RunLog)> {
    config.validate()?;
    let start = Instant::now();
    let seed = config.run_seed(run);
    let mut batch_rng = Rng::derive(seed, 1);
    let train_data = encode_split(&model, train)?;
    let dev_data = encode_split(&model, dev)?;
    let adam = config.adam();
    let mut state = AdamState::new(model.params());
    let mut evaluations = Vec::new();
    let mut best: Option<(usize, f64, M)> = None;
    let mut stop_reason = StopReason::EpochCap;
    let mut epochs_used = 0;
    let eval_batch = config.batch_size.max(256);

    for epoch in 1..=config.max_epochs {
        epochs_used = epoch;
        let mut losses = Vec::new();
        for batch in make_batches(train, config.batch_size, &mut batch_rng) {
            let s = gather(&train_data.sources, &batch);
            let t = gather(&train_data.targets, &batch);
            let loss = train_step(&mut model, &s, &t, &adam, config.clip, &mut state)?;
            losses.push(loss.to_f64().unwrap_or(f64::NAN));
        }
        if epoch % config.eval_interval != 0 && epoch != config.max_epochs {
            continue;
        }
        let train_acc = evaluate::full_sequence_accuracy(&model, train, eval_batch)?;
        let dev_acc = evaluate::full_sequence_accuracy(&model, dev, eval_batch)?;
        let dev_loss = mean_loss(&model, &dev_data, eval_batch)?;
        evaluations.push(EvalRow {
            epoch,
            train_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            dev_loss,
            train_full_seq: train_acc,
            dev_full_seq: dev_acc,
        });
        if best.as_ref().map_or(true, |(_, acc, _)| dev_acc > *acc) {
            best = Some((epoch, dev_acc, model.clone()));
        }
        if dev_acc == 1.0 {
            stop_reason = StopReason::DevPerfect;
            break;
        }
        if train_acc > 0.9999 && dev_acc > 0.995 {
            stop_reason = StopReason::Converged;
            break;
        }
    }
    let (best_epoch, best_dev, best_model) = best.expect("at least one evaluation happens");
    let log = RunLog {
        config: config.clone(),
        run,
        seed,
        evaluations,
        stop_reason,
        best_epoch,
        best_dev_full_seq: best_dev,
        epochs_used,
        parameters: best_model.params().count(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((best_model, log))
}

/// Initializes and trains one encoder-decoder run on `data`.
pub fn train_model<T: Scalar>(config: &TrainConfig, data: &Dataset, run: usize) -> Result<(Seq2SeqModel<T>, RunLog)> {
    if data.task != config.task {
        return Err(Error::Config(format!("dataset is for {}, config for {}", data.task, config.task)));
    }
    let mut init = Rng::derive(config.run_seed(run), 0);
    let model = Seq2SeqModel::initialized(config.model_config(), &mut init)?;
    train_loop(model, config, data.split(Split::Train), data.split(Split::Dev), run)
}

/// Trains a one-cell tagger to echo its input.
pub fn train_tagger_identity<T: Scalar>(config: &TrainConfig, data: &Dataset, run: usize) -> Result<(TaggerModel<T>, RunLog)> {
    if config.task != Task::Identity || data.task != Task::Identity {
        return Err(Error::Config("the tagger is trained on identity only".into()));
    }
    let mut init = Rng::derive(config.run_seed(run), 0);
    let model = TaggerModel::initialized(config.tagger_config(), &mut init)?;
    train_loop(model, config, data.split(Split::Train), data.split(Split::Dev), run)
}

/// Index of the run maximizing `0.4 * test + 0.6 * gen`; lowest index on ties.
pub fn select_best_run(runs: &[(f64, f64)]) -> Result<usize> {
    let score = |(test, gen): (f64, f64)| 0.4 * test + 0.6 * gen;
    let mut best: Option<(usize, f64)> = None;
    for (i, &r) in runs.iter().enumerate() {
        let s = score(r);
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Contract("no runs to select from".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_splits, DataConfig, SplitCounts};

    #[test]
    fn best_run_examples() {
        assert_eq!(select_best_run(&[(0.9, 0.1), (0.8, 0.3), (0.85, 0.15)]).unwrap(), 1);
        assert_eq!(select_best_run(&[(0.2, 0.2)]).unwrap(), 0);
        assert_eq!(select_best_run(&[(0.5, 0.5), (0.5, 0.5)]).unwrap(), 0);
        assert!(select_best_run(&[]).is_err());
    }

    fn tiny_data(train: usize) -> Dataset {
        let cfg = DataConfig {
            train_lengths: vec![3, 4, 5],
            gen_lengths: vec![6],
            counts: SplitCounts { train, dev: 20, test: 20, gen: 20 },
        };
        generate_splits(Task::Identity, 2, &cfg).unwrap()
    }

    #[test]
    fn batches_are_single_length_and_deterministic() {
        let d = tiny_data(1000);
        let train = d.split(Split::Train);
        let a = make_batches(train, 1000, &mut Rng::new(5));
        assert_eq!(a.len(), 3);
        for b in &a {
            let l = train.pairs[b[0]].input.len();
            assert!(b.iter().all(|&i| train.pairs[i].input.len() == l));
        }
        assert_eq!(a, make_batches(train, 1000, &mut Rng::new(5)));
        let small = make_batches(train, 64, &mut Rng::new(5));
        let mut all: Vec<usize> = small.concat();
        all.sort();
        assert_eq!(all, (0..train.len()).collect::<Vec<_>>());
    }

    #[test]
    fn log_shape_and_epoch_cap() {
        let d = tiny_data(30);
        let mut cfg = TrainConfig::tiny_tagger(Variant::Gru, 3);
        cfg.max_epochs = 7;
        cfg.eval_interval = 3;
        cfg.batch_size = 16;
        cfg.learning_rate = 1e-6;
        let (_, log) = train_tagger_identity::<f64>(&cfg, &d, 0).unwrap();
        assert_eq!(log.stop_reason, StopReason::EpochCap);
        assert_eq!(log.epochs_used, 7);
        let epochs: Vec<usize> = log.evaluations.iter().map(|e| e.epoch).collect();
        assert_eq!(epochs, vec![3, 6, 7]);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::tiny_tagger(Variant::Srnn, 0);
        c.validate().unwrap();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::tiny_tagger(Variant::Srnn, 0);
        c.learning_rate = f64::NAN;
        assert!(c.validate().is_err());
        assert_ne!(c.run_seed(0), c.run_seed(1));
    }
}

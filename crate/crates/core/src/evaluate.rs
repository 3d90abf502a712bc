//! Fixed-length evaluation of anything that maps symbol sequences to symbol
//! sequences: trained models, or reference stubs.

use std::collections::BTreeMap;

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::metrics::{per_length_breakdown, MetricsRecord, Outcome, RecordLabels};
use crate::scalar::Scalar;
use crate::seq2seq::Seq2SeqModel;
use crate::tagger::TaggerModel;
use crate::vocab;

pub trait Predictor {
    /// The sequence the model consumes for input string `w`.
    fn source_indices(&self, w: &str) -> Result<Vec<usize>>;

    /// The sequence predictions are scored against for target string `y`.
    fn target_indices(&self, y: &str) -> Result<Vec<usize>>;

    /// Exactly `steps` symbols for each of the equal-length `sources`.
    fn predict(&self, sources: &[Vec<usize>], steps: usize) -> Result<Vec<Vec<usize>>>;
}

impl<T: Scalar> Predictor for Seq2SeqModel<T> {
    fn source_indices(&self, w: &str) -> Result<Vec<usize>> {
        let mut v = Vec::with_capacity(w.len() + 2);
        v.push(self.config().start());
        v.extend(vocab::encode(w)?);
        v.push(self.config().end());
        Ok(v)
    }

    fn target_indices(&self, y: &str) -> Result<Vec<usize>> {
        let mut v = vocab::encode(y)?;
        v.push(self.config().end());
        Ok(v)
    }

    fn predict(&self, sources: &[Vec<usize>], steps: usize) -> Result<Vec<Vec<usize>>> {
        self.greedy(sources, steps)
    }
}

impl<T: Scalar> Predictor for TaggerModel<T> {
    fn source_indices(&self, w: &str) -> Result<Vec<usize>> {
        vocab::encode(w)
    }

    fn target_indices(&self, y: &str) -> Result<Vec<usize>> {
        vocab::encode(y)
    }

    fn predict(&self, sources: &[Vec<usize>], steps: usize) -> Result<Vec<Vec<usize>>> {
        if sources.iter().any(|s| s.len() != steps) {
            return Err(Error::Contract("a tagger emits exactly one symbol per input symbol".into()));
        }
        self.tag(sources)
    }
}

/// Predicts every pair of `split`, batching equal input lengths, and groups
/// the outcomes by input length.
pub fn evaluate_split<P: Predictor + ?Sized>(
    predictor: &P,
    split: &DatasetSplit,
    batch_size: usize,
) -> Result<BTreeMap<usize, Vec<Outcome>>> {
    let mut groups = BTreeMap::new();
    for (len, pairs) in split.by_length() {
        let mut outcomes = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(batch_size.max(1)) {
            let sources = chunk
                .iter()
                .map(|p| predictor.source_indices(&p.input))
                .collect::<Result<Vec<_>>>()?;
            let targets = chunk
                .iter()
                .map(|p| predictor.target_indices(&p.target))
                .collect::<Result<Vec<_>>>()?;
            let steps = targets[0].len();
            if targets.iter().any(|t| t.len() != steps) {
                return Err(Error::Contract(format!("targets of length-{len} inputs differ in length")));
            }
            let outputs = predictor.predict(&sources, steps)?;
            for (t, o) in targets.into_iter().zip(outputs) {
                outcomes.push(Outcome::new(t, o)?);
            }
        }
        groups.insert(len, outcomes);
    }
    Ok(groups)
}

/// Per-length and aggregate records for one split.
pub fn evaluate_records<P: Predictor + ?Sized>(
    predictor: &P,
    split: &DatasetSplit,
    labels: &RecordLabels,
    batch_size: usize,
) -> Result<Vec<MetricsRecord>> {
    per_length_breakdown(&evaluate_split(predictor, split, batch_size)?, labels)
}

/// Full-sequence accuracy over a whole split.
pub fn full_sequence_accuracy<P: Predictor + ?Sized>(predictor: &P, split: &DatasetSplit, batch_size: usize) -> Result<f64> {
    let groups = evaluate_split(predictor, split, batch_size)?;
    let all: Vec<Outcome> = groups.into_values().flatten().collect();
    crate::metrics::full_sequence_accuracy(&all)
}

//! The deterministic string functions and the length-based distribution split.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Identity,
    Reversal,
    TotalReduplication,
    QuadraticCopy,
    /// `w -> w^k`; always built through [`Task::kcopy`] so that `k >= 1`.
    KCopy(usize),
    SortAscending,
    SortDescending,
}

impl Task {
    /// The four tasks of the main experiments, easiest first.
    pub const MAIN: [Task; 4] = [
        Task::Identity,
        Task::Reversal,
        Task::TotalReduplication,
        Task::QuadraticCopy,
    ];

    pub fn kcopy(k: usize) -> Result<Task> {
        if k == 0 {
            return Err(Error::Config("kcopy needs k >= 1".into()));
        }
        Ok(Task::KCopy(k))
    }

    /// Target string for `w`. Fails on any character outside `a..z`.
    pub fn apply(&self, w: &str) -> Result<String> {
        let idx = vocab::encode(w)?;
        vocab::decode(&self.apply_indices(&idx))
    }

    /// Same as [`Task::apply`] on symbol indices. Indices are not validated.
    pub fn apply_indices(&self, w: &[usize]) -> Vec<usize> {
        let repeat = |k: usize| w.repeat(k);
        match *self {
            Task::Identity => w.to_vec(),
            Task::Reversal => w.iter().rev().copied().collect(),
            Task::TotalReduplication => repeat(2),
            Task::QuadraticCopy => repeat(w.len()),
            Task::KCopy(k) => repeat(k),
            Task::SortAscending => {
                let mut v = w.to_vec();
                v.sort_unstable();
                v
            }
            Task::SortDescending => {
                let mut v = w.to_vec();
                v.sort_unstable_by(|a, b| b.cmp(a));
                v
            }
        }
    }

    /// Output length for an input of length `n`.
    pub fn output_len(&self, n: usize) -> usize {
        match *self {
            Task::TotalReduplication => 2 * n,
            Task::QuadraticCopy => n * n,
            Task::KCopy(k) => k * n,
            _ => n,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Identity => f.write_str("identity"),
            Task::Reversal => f.write_str("reversal"),
            Task::TotalReduplication => f.write_str("total_reduplication"),
            Task::QuadraticCopy => f.write_str("quadratic_copy"),
            Task::KCopy(k) => write!(f, "kcopy:{k}"),
            Task::SortAscending => f.write_str("sort_ascending"),
            Task::SortDescending => f.write_str("sort_descending"),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Task> {
        match s {
            "identity" => Ok(Task::Identity),
            "reversal" => Ok(Task::Reversal),
            "total_reduplication" => Ok(Task::TotalReduplication),
            "quadratic_copy" => Ok(Task::QuadraticCopy),
            "sort_ascending" => Ok(Task::SortAscending),
            "sort_descending" => Ok(Task::SortDescending),
            _ => match s.strip_prefix("kcopy:").map(str::parse::<usize>) {
                Some(Ok(k)) => Task::kcopy(k),
                _ => Err(Error::Config(format!("unknown task `{s}`"))),
            },
        }
    }
}

impl Serialize for Task {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Task {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Task, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// True iff inputs of `length` were seen during training.
pub fn is_in_distribution(length: usize, train_lengths: &[usize]) -> bool {
    train_lengths.contains(&length)
}

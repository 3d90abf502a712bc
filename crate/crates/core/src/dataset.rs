//! Train/dev/test/gen splits: sampling, disjointness and the on-disk format.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tasks::Task;
use crate::vocab;

pub const GENERATOR_VERSION: u32 = 1;
pub const SIDECAR: &str = "dataset.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    Gen,
}

impl Split {
    /// Generation order; the shared seen-set is filled in this order.
    pub const ALL: [Split; 4] = [Split::Train, Split::Dev, Split::Test, Split::Gen];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Gen => "gen",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.tsv", self.name())
    }

    fn stream(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pair {
    pub input: String,
    pub target: String,
}

/// Pairs per input length for each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub gen: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
            Split::Gen => self.gen,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Input lengths of the train, dev and test splits.
    pub train_lengths: Vec<usize>,
    /// Input lengths of the gen split, disjoint from `train_lengths`.
    pub gen_lengths: Vec<usize>,
    pub counts: SplitCounts,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_lengths: (6..=15).collect(),
            gen_lengths: (1..=5).chain(16..=30).collect(),
            counts: SplitCounts {
                train: 1000,
                dev: 1000,
                test: 5000,
                gen: 5000,
            },
        }
    }
}

impl DataConfig {
    pub fn lengths(&self, split: Split) -> &[usize] {
        match split {
            Split::Gen => &self.gen_lengths,
            _ => &self.train_lengths,
        }
    }

    pub fn total(&self, split: Split) -> usize {
        self.lengths(split).len() * self.counts.get(split)
    }

    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            let ls = self.lengths(split);
            if ls.is_empty() {
                return Err(Error::Config(format!("{split} has no lengths")));
            }
            if ls.contains(&0) {
                return Err(Error::Config("input lengths start at 1".into()));
            }
            let unique: HashSet<_> = ls.iter().collect();
            if unique.len() != ls.len() {
                return Err(Error::Config(format!("{split} lists a length twice")));
            }
        }
        if let Some(l) = self.gen_lengths.iter().find(|l| self.train_lengths.contains(l)) {
            return Err(Error::Config(format!("length {l} is both in and out of distribution")));
        }
        // Strings of length >= 3 are unique across all splits.
        let mut demand: BTreeMap<usize, u128> = BTreeMap::new();
        for split in Split::ALL {
            for &l in self.lengths(split) {
                *demand.entry(l).or_default() += self.counts.get(split) as u128;
            }
        }
        for (l, need) in demand {
            if l >= 3 && need > space(l) {
                return Err(Error::Capacity(format!(
                    "{need} unique strings of length {l} requested, only {} exist",
                    space(l)
                )));
            }
        }
        Ok(())
    }
}

fn space(l: usize) -> u128 {
    (vocab::LETTERS as u128).checked_pow(l as u32).unwrap_or(u128::MAX)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub split: Split,
    pub pairs: Vec<Pair>,
}

impl DatasetSplit {
    pub fn by_length(&self) -> BTreeMap<usize, Vec<&Pair>> {
        let mut m: BTreeMap<usize, Vec<&Pair>> = BTreeMap::new();
        for p in &self.pairs {
            m.entry(p.input.len()).or_default().push(p);
        }
        m
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.by_length().into_keys().collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Same inputs with targets recomputed under `task`.
    pub fn retarget(&self, task: Task) -> Result<DatasetSplit> {
        let pairs = self
            .pairs
            .iter()
            .map(|p| {
                Ok(Pair {
                    input: p.input.clone(),
                    target: task.apply(&p.input)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DatasetSplit { split: self.split, pairs })
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for p in &self.pairs {
            writeln!(w, "{}\t{}", p.input, p.target)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `input<TAB>target` lines, checking every target against `task`.
    pub fn read_tsv(path: &Path, split: Split, task: Task) -> Result<DatasetSplit> {
        let r = BufReader::new(fs::File::open(path)?);
        let mut pairs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let parse = |msg: String| Error::Parse { line: i + 1, msg };
            let (input, target) = line
                .split_once('\t')
                .ok_or_else(|| parse("expected input<TAB>target".into()))?;
            let expected = task.apply(input).map_err(|e| parse(e.to_string()))?;
            if expected != target {
                return Err(parse(format!("target for `{input}` is not {task}(input)")));
            }
            pairs.push(Pair {
                input: input.to_string(),
                target: target.to_string(),
            });
        }
        Ok(DatasetSplit { split, pairs })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub generator_version: u32,
    pub rng: String,
    pub task: Task,
    pub seed: u64,
    pub config: DataConfig,
    pub totals: BTreeMap<Split, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub task: Task,
    pub seed: u64,
    pub config: DataConfig,
    pub splits: Vec<DatasetSplit>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &DatasetSplit {
        &self.splits[split as usize]
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            generator_version: GENERATOR_VERSION,
            rng: Rng::ALGORITHM.to_string(),
            task: self.task,
            seed: self.seed,
            config: self.config.clone(),
            totals: self.splits.iter().map(|s| (s.split, s.len())).collect(),
        }
    }

    /// Writes the four split files and the sidecar into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for s in &self.splits {
            s.write_tsv(&dir.join(s.split.file_name()))?;
        }
        let mut json = serde_json::to_string_pretty(&self.sidecar())?;
        json.push('\n');
        fs::write(dir.join(SIDECAR), json)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Dataset> {
        let side: Sidecar = serde_json::from_str(&fs::read_to_string(dir.join(SIDECAR))?)?;
        if side.generator_version != GENERATOR_VERSION {
            return Err(Error::Format(format!(
                "dataset generator version {} is not {GENERATOR_VERSION}",
                side.generator_version
            )));
        }
        let splits = Split::ALL
            .into_iter()
            .map(|s| DatasetSplit::read_tsv(&dir.join(s.file_name()), s, side.task))
            .collect::<Result<Vec<_>>>()?;
        for s in &splits {
            if side.totals.get(&s.split) != Some(&s.len()) {
                return Err(Error::Format(format!("{} size disagrees with the sidecar", s.split)));
            }
        }
        Ok(Dataset {
            task: side.task,
            seed: side.seed,
            config: side.config,
            splits,
        })
    }
}

/// Samples all four splits for `task`.
///
/// Lengths 1 and 2 are drawn without replacement from `Σ^l` repeated just
/// often enough to exceed the request, so they may repeat. Longer strings are
/// built from i.i.d. uniform symbols and rejected if already used by any split.
pub fn generate_splits(task: Task, seed: u64, config: &DataConfig) -> Result<Dataset> {
    config.validate()?;
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let mut splits = Vec::with_capacity(4);
    for split in Split::ALL {
        let count = config.counts.get(split);
        let mut pairs = Vec::with_capacity(config.total(split));
        for &l in config.lengths(split) {
            let mut rng = Rng::derive(seed, (split.stream() << 32) | l as u64);
            let inputs = if l <= 2 {
                sample_short(l, count, &mut rng)
            } else {
                sample_unique(l, count, &mut rng, &mut seen)
            };
            for w in inputs {
                let input = String::from_utf8(w).expect("ascii letters");
                let target = task.apply(&input)?;
                pairs.push(Pair { input, target });
            }
        }
        splits.push(DatasetSplit { split, pairs });
    }
    Ok(Dataset {
        task,
        seed,
        config: config.clone(),
        splits,
    })
}

fn sample_unique(l: usize, count: usize, rng: &mut Rng, seen: &mut HashSet<Vec<u8>>) -> Vec<Vec<u8>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w: Vec<u8> = (0..l).map(|_| b'a' + rng.below(vocab::LETTERS) as u8).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn sample_short(l: usize, count: usize, rng: &mut Rng) -> Vec<Vec<u8>> {
    let base = vocab::LETTERS.pow(l as u32);
    let copies = count / base + 1;
    let mut pool: Vec<usize> = (0..base * copies).map(|i| i % base).collect();
    // Partial Fisher-Yates: the first `count` slots are a uniform sample
    // without replacement.
    for i in 0..count {
        let j = i + rng.below(pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool.into_iter()
        .map(|mut code| {
            let mut w = vec![0u8; l];
            for slot in w.iter_mut().rev() {
                *slot = b'a' + (code % vocab::LETTERS) as u8;
                code /= vocab::LETTERS;
            }
            w
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataConfig {
        DataConfig {
            train_lengths: vec![2, 3, 4],
            gen_lengths: vec![1, 5],
            counts: SplitCounts {
                train: 30,
                dev: 30,
                test: 40,
                gen: 50,
            },
        }
    }

    #[test]
    fn default_totals() {
        let c = DataConfig::default();
        let totals: Vec<usize> = Split::ALL.iter().map(|&s| c.total(s)).collect();
        assert_eq!(totals, vec![10_000, 10_000, 50_000, 100_000]);
    }

    #[test]
    fn counts_and_lengths_match_config() {
        let d = generate_splits(Task::Reversal, 3, &small()).unwrap();
        for s in &d.splits {
            let by = s.by_length();
            assert_eq!(by.keys().copied().collect::<Vec<_>>(), {
                let mut v = small().lengths(s.split).to_vec();
                v.sort();
                v
            });
            assert!(by.values().all(|v| v.len() == small().counts.get(s.split)));
            assert!(s.pairs.iter().all(|p| Task::Reversal.apply(&p.input).unwrap() == p.target));
        }
        // 50 strings of length 1 need two copies of the alphabet.
        let ones: HashSet<_> = d.split(Split::Gen).pairs.iter().filter(|p| p.input.len() == 1).collect();
        assert_eq!(ones.len(), 26);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_splits(Task::Identity, 9, &small()).unwrap();
        assert_eq!(a, generate_splits(Task::Identity, 9, &small()).unwrap());
        assert_ne!(a, generate_splits(Task::Identity, 10, &small()).unwrap());
    }

    #[test]
    fn infeasible_counts_rejected() {
        let mut c = small();
        c.train_lengths = vec![3];
        c.counts.test = 26 * 26 * 26;
        assert!(matches!(generate_splits(Task::Identity, 1, &c), Err(Error::Capacity(_))));
        c.gen_lengths = vec![3];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn files_round_trip() {
        let d = generate_splits(Task::TotalReduplication, 5, &small()).unwrap();
        let dir = std::env::temp_dir().join(format!("transduce-ds-{}", std::process::id()));
        d.write_dir(&dir).unwrap();
        let back = Dataset::read_dir(&dir).unwrap();
        assert_eq!(back, d);
        fs::write(dir.join("dev.tsv"), "abc\tabd\n").unwrap();
        assert!(matches!(Dataset::read_dir(&dir), Err(Error::Parse { line: 1, .. })));
        fs::remove_dir_all(&dir).unwrap();
    }
}

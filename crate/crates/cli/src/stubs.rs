//! Reference predictors with known behaviour, used to check the evaluation
//! path independently of any trained network.

use std::fmt;
use std::str::FromStr;

use transduce::evaluate::Predictor;
use transduce::fst::{self, StepBudget, TwoWayFst};
use transduce::{vocab, Error, Result, Task};

/// Which stub to build. Parsed from `oracle`, `echo`, or `constant:<letter>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StubKind {
    Oracle,
    Echo,
    Constant(char),
}

impl fmt::Display for StubKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StubKind::Oracle => f.write_str("oracle"),
            StubKind::Echo => f.write_str("echo"),
            StubKind::Constant(c) => write!(f, "constant:{c}"),
        }
    }
}

impl FromStr for StubKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(StubKind::Oracle),
            "echo" => Ok(StubKind::Echo),
            _ => {
                let letter = s
                    .strip_prefix("constant:")
                    .and_then(|rest| {
                        let mut chars = rest.chars();
                        match (chars.next(), chars.next()) {
                            (Some(c), None) if c.is_ascii_lowercase() => Some(c),
                            _ => None,
                        }
                    })
                    .ok_or_else(|| Error::Config(format!("unknown stub '{s}'")))?;
                Ok(StubKind::Constant(letter))
            }
        }
    }
}

/// Runs a two-way transducer for the evaluated task and emits its output
/// followed by the end marker.
pub struct FstOracle {
    machine: TwoWayFst,
    budget: StepBudget,
}

impl FstOracle {
    pub fn for_task(task: Task) -> Result<Self> {
        let (machine, budget) = fst::for_task(task)?;
        Ok(FstOracle { machine, budget })
    }
}

/// Repeats its input forever and never emits the end marker.
pub struct EchoStub;

/// Emits one letter at every step.
pub struct ConstantStub(pub usize);

fn letters(w: &str) -> Result<Vec<usize>> {
    vocab::encode(w)
}

fn with_end(y: &str) -> Result<Vec<usize>> {
    vocab::decoder_target(y)
}

fn fit(mut v: Vec<usize>, steps: usize) -> Vec<usize> {
    v.resize(steps, vocab::END);
    v
}

impl Predictor for FstOracle {
    fn source_indices(&self, w: &str) -> Result<Vec<usize>> {
        letters(w)
    }

    fn target_indices(&self, y: &str) -> Result<Vec<usize>> {
        with_end(y)
    }

    fn predict(&self, sources: &[Vec<usize>], steps: usize) -> Result<Vec<Vec<usize>>> {
        sources
            .iter()
            .map(|s| {
                let w = vocab::decode(s)?;
                let run = self.machine.run_with_limit(&w, (self.budget)(s.len()))?;
                Ok(fit(with_end(&run.output)?, steps))
            })
            .collect()
    }
}

impl Predictor for EchoStub {
    fn source_indices(&self, w: &str) -> Result<Vec<usize>> {
        letters(w)
    }

    fn target_indices(&self, y: &str) -> Result<Vec<usize>> {
        with_end(y)
    }

    fn predict(&self, sources: &[Vec<usize>], steps: usize) -> Result<Vec<Vec<usize>>> {
        sources
            .iter()
            .map(|s| {
                if s.is_empty() {
                    return Err(Error::Contract("cannot echo an empty input".into()));
                }
                Ok(s.iter().copied().cycle().take(steps).collect())
            })
            .collect()
    }
}

impl Predictor for ConstantStub {
    fn source_indices(&self, w: &str) -> Result<Vec<usize>> {
        letters(w)
    }

    fn target_indices(&self, y: &str) -> Result<Vec<usize>> {
        with_end(y)
    }

    fn predict(&self, sources: &[Vec<usize>], steps: usize) -> Result<Vec<Vec<usize>>> {
        Ok(vec![vec![self.0; steps]; sources.len()])
    }
}

/// Builds the stub for `kind`, evaluated against `task`.
pub fn build(kind: StubKind, task: Task) -> Result<Box<dyn Predictor>> {
    Ok(match kind {
        StubKind::Oracle => Box::new(FstOracle::for_task(task)?),
        StubKind::Echo => Box::new(EchoStub),
        StubKind::Constant(c) => Box::new(ConstantStub(vocab::index_of(c)?)),
    })
}

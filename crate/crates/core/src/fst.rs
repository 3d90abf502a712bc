//! Deterministic two-way finite-state transducers over `⋊ w ⋉`, optionally
//! with one counter register, plus builders for the task functions.
//!
//! Machine text format, one item per line (`#` starts a comment):
//!
//! ```text
//! initial q0
//! final qf
//! q0 ⋊ → λ +1 q1
//! q1 Σ → Σ +1 q1
//! q2 ⋊ nonzero → λ +1 q1 dec
//! ```
//!
//! A transition reads `state symbol [zero|nonzero] → output move state [inc|dec]`.
//! `Σ` (or `*`) as the read symbol matches any letter; as the output it echoes
//! the letter read. `λ` (or `_`) is the empty output. `->`, `|-` and `-|` are
//! accepted for `→`, `⋊` and `⋉`.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::tasks::Task;

/// Default step-limit constant: runs may take `c * (n + 2)^2` steps.
pub const STEP_CONSTANT: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Left,
    Right,
    Letter(u8),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Left => f.write_str("⋊"),
            Cell::Right => f.write_str("⋉"),
            Cell::Letter(c) => write!(f, "{}", *c as char),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Read {
    Left,
    Right,
    Letter(u8),
    AnyLetter,
}

impl Read {
    fn matches(self, cell: Cell) -> bool {
        match (self, cell) {
            (Read::Left, Cell::Left) | (Read::Right, Cell::Right) => true,
            (Read::AnyLetter, Cell::Letter(_)) => true,
            (Read::Letter(a), Cell::Letter(b)) => a == b,
            _ => false,
        }
    }

    fn overlaps(self, other: Read) -> bool {
        match (self, other) {
            (Read::AnyLetter, Read::Letter(_)) | (Read::Letter(_), Read::AnyLetter) => true,
            _ => self == other,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Output {
    Empty,
    /// Copies the letter under the head.
    Echo,
    Literal(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Move {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Guard {
    Always,
    Zero,
    NonZero,
}

impl Guard {
    fn admits(self, register: usize) -> bool {
        match self {
            Guard::Always => true,
            Guard::Zero => register == 0,
            Guard::NonZero => register > 0,
        }
    }

    fn overlaps(self, other: Guard) -> bool {
        !matches!((self, other), (Guard::Zero, Guard::NonZero) | (Guard::NonZero, Guard::Zero))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Register {
    Keep,
    Inc,
    Dec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StateId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub from: StateId,
    pub read: Read,
    pub guard: Guard,
    pub output: Output,
    pub step: Move,
    pub to: StateId,
    pub register: Register,
}

/// Outcome of a halting run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Run {
    pub output: String,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoWayFst {
    states: Vec<String>,
    initial: StateId,
    accept: StateId,
    transitions: Vec<Transition>,
}

impl TwoWayFst {
    /// Checks determinism: no two transitions of one state can fire on the
    /// same cell and register value.
    pub fn new(states: Vec<String>, initial: StateId, accept: StateId, transitions: Vec<Transition>) -> Result<Self> {
        let n = states.len();
        if initial.0 >= n || accept.0 >= n {
            return Err(Error::Contract("initial or final state out of range".into()));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.from.0 >= n || t.to.0 >= n {
                return Err(Error::Contract(format!("transition {i} names an unknown state")));
            }
            if t.from == accept {
                return Err(Error::Contract("the final state has no outgoing transitions".into()));
            }
            if t.output == Output::Echo && !matches!(t.read, Read::AnyLetter | Read::Letter(_)) {
                return Err(Error::Contract(format!("transition {i} echoes an endmarker")));
            }
            for u in &transitions[..i] {
                if u.from == t.from && u.read.overlaps(t.read) && u.guard.overlaps(t.guard) {
                    return Err(Error::Contract(format!(
                        "nondeterministic transitions from {} on {:?}",
                        states[t.from.0], t.read
                    )));
                }
            }
        }
        Ok(TwoWayFst {
            states,
            initial,
            accept,
            transitions,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn state_name(&self, id: StateId) -> &str {
        &self.states[id.0]
    }

    pub fn uses_register(&self) -> bool {
        self.transitions
            .iter()
            .any(|t| t.register != Register::Keep || t.guard != Guard::Always)
    }

    pub fn default_step_limit(input_len: usize) -> usize {
        STEP_CONSTANT * (input_len + 2) * (input_len + 2)
    }

    /// Runs on `w` with the default step limit.
    pub fn run(&self, w: &str) -> Result<Run> {
        self.run_with_limit(w, Self::default_step_limit(w.chars().count()))
    }

    /// Runs on `⋊ w ⋉`. Entering the final state halts immediately, so the
    /// last move may step off the tape.
    pub fn run_with_limit(&self, w: &str, step_limit: usize) -> Result<Run> {
        let mut tape = Vec::with_capacity(w.len() + 2);
        tape.push(Cell::Left);
        for c in w.chars() {
            if !c.is_ascii_lowercase() {
                return Err(Error::Vocabulary(format!("`{c}` is not a letter")));
            }
            tape.push(Cell::Letter(c as u8));
        }
        tape.push(Cell::Right);

        let mut state = self.initial;
        let mut head = 0usize;
        let mut register = 0usize;
        let mut output = String::new();
        let mut steps = 0usize;
        while state != self.accept {
            if steps == step_limit {
                return Err(Error::NonHalting(step_limit));
            }
            steps += 1;
            let cell = tape[head];
            let t = self
                .transitions
                .iter()
                .find(|t| t.from == state && t.read.matches(cell) && t.guard.admits(register))
                .ok_or_else(|| Error::Rejected {
                    state: self.states[state.0].clone(),
                    symbol: cell.to_string(),
                })?;
            match (&t.output, cell) {
                (Output::Empty, _) => {}
                (Output::Echo, Cell::Letter(c)) => output.push(c as char),
                (Output::Echo, _) => unreachable!("checked at construction"),
                (Output::Literal(s), _) => output.push_str(s),
            }
            register = match t.register {
                Register::Keep => register,
                Register::Inc => register + 1,
                Register::Dec => register.checked_sub(1).ok_or_else(|| Error::Rejected {
                    state: self.states[state.0].clone(),
                    symbol: format!("{cell} with an empty register"),
                })?,
            };
            state = t.to;
            if state == self.accept {
                break;
            }
            head = match t.step {
                Move::Right if head + 1 < tape.len() => head + 1,
                Move::Left if head > 0 => head - 1,
                _ => {
                    return Err(Error::Rejected {
                        state: self.states[state.0].clone(),
                        symbol: format!("move past {cell}"),
                    })
                }
            };
        }
        Ok(Run { output, steps })
    }

    pub fn parse(text: &str) -> Result<TwoWayFst> {
        let mut names: Vec<String> = Vec::new();
        let mut ids: HashMap<String, StateId> = HashMap::new();
        let mut intern = |name: &str| -> StateId {
            *ids.entry(name.to_string()).or_insert_with(|| {
                names.push(name.to_string());
                StateId(names.len() - 1)
            })
        };
        let mut initial = None;
        let mut accept = None;
        let mut transitions = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["initial", q] => initial = Some(intern(q)),
                ["final", q] => accept = Some(intern(q)),
                _ => {
                    let arrow = words
                        .iter()
                        .position(|w| *w == "→" || *w == "->")
                        .ok_or_else(|| err("missing arrow".into()))?;
                    let (lhs, rhs) = (&words[..arrow], &words[arrow + 1..]);
                    let (from, read, guard) = match lhs {
                        [q, s] => (q, s, Guard::Always),
                        [q, s, "zero"] => (q, s, Guard::Zero),
                        [q, s, "nonzero"] => (q, s, Guard::NonZero),
                        _ => return Err(err("expected `state symbol [zero|nonzero]`".into())),
                    };
                    let (out, step, to, register) = match rhs {
                        [o, m, q] => (o, m, q, Register::Keep),
                        [o, m, q, "inc"] => (o, m, q, Register::Inc),
                        [o, m, q, "dec"] => (o, m, q, Register::Dec),
                        _ => return Err(err("expected `output move state [inc|dec]`".into())),
                    };
                    let read = match *read {
                        "⋊" | "|-" => Read::Left,
                        "⋉" | "-|" => Read::Right,
                        "Σ" | "*" => Read::AnyLetter,
                        s if s.len() == 1 && s.as_bytes()[0].is_ascii_lowercase() => Read::Letter(s.as_bytes()[0]),
                        s => return Err(err(format!("unknown symbol `{s}`"))),
                    };
                    let output = match *out {
                        "λ" | "_" => Output::Empty,
                        "Σ" | "*" => Output::Echo,
                        s if s.bytes().all(|b| b.is_ascii_lowercase()) => Output::Literal(s.to_string()),
                        s => return Err(err(format!("unknown output `{s}`"))),
                    };
                    let step = match *step {
                        "+1" => Move::Right,
                        "-1" => Move::Left,
                        s => return Err(err(format!("move must be +1 or -1, got `{s}`"))),
                    };
                    transitions.push(Transition {
                        from: intern(from),
                        read,
                        guard,
                        output,
                        step,
                        to: intern(to),
                        register,
                    });
                }
            }
        }
        let missing = |what: &str| Error::Parse {
            line: text.lines().count(),
            msg: format!("no {what} state declared"),
        };
        let initial = initial.ok_or_else(|| missing("initial"))?;
        let accept = accept.ok_or_else(|| missing("final"))?;
        TwoWayFst::new(names, initial, accept, transitions)
    }
}

impl fmt::Display for TwoWayFst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "initial {}", self.states[self.initial.0])?;
        writeln!(f, "final {}", self.states[self.accept.0])?;
        for t in &self.transitions {
            let read = match t.read {
                Read::Left => "⋊".to_string(),
                Read::Right => "⋉".to_string(),
                Read::AnyLetter => "Σ".to_string(),
                Read::Letter(c) => (c as char).to_string(),
            };
            let guard = match t.guard {
                Guard::Always => "",
                Guard::Zero => " zero",
                Guard::NonZero => " nonzero",
            };
            let out = match &t.output {
                Output::Empty => "λ",
                Output::Echo => "Σ",
                Output::Literal(s) => s.as_str(),
            };
            let step = match t.step {
                Move::Left => "-1",
                Move::Right => "+1",
            };
            let reg = match t.register {
                Register::Keep => "",
                Register::Inc => " inc",
                Register::Dec => " dec",
            };
            writeln!(
                f,
                "{} {read}{guard} → {out} {step} {}{reg}",
                self.states[t.from.0], self.states[t.to.0]
            )?;
        }
        Ok(())
    }
}

/// The total-reduplication machine, transition for transition.
pub const TOTAL_REDUPLICATION: &str = include_str!("../machines/total_reduplication.fst");

fn build(text: &str) -> TwoWayFst {
    TwoWayFst::parse(text).expect("built-in machine is well formed")
}

/// One left-to-right pass echoing every letter.
pub fn identity() -> TwoWayFst {
    build(
        "initial q0\nfinal qf\n\
         q0 ⋊ → λ +1 q1\n\
         q1 Σ → Σ +1 q1\n\
         q1 ⋉ → λ +1 qf\n",
    )
}

/// Silent forward scan, then a backward scan that echoes.
pub fn reversal() -> TwoWayFst {
    build(
        "initial q0\nfinal qf\n\
         q0 ⋊ → λ +1 q1\n\
         q1 Σ → λ +1 q1\n\
         q1 ⋉ → λ -1 q2\n\
         q2 Σ → Σ -1 q2\n\
         q2 ⋊ → λ +1 qf\n",
    )
}

pub fn total_reduplication() -> TwoWayFst {
    build(TOTAL_REDUPLICATION)
}

/// Counts `|w|` into the register, then repeats echo-forward, silent rewind
/// and decrement until the register is empty.
pub fn quadratic() -> TwoWayFst {
    build(
        "initial q0\nfinal qf\n\
         q0 ⋊ → λ +1 load\n\
         load Σ → λ +1 load inc\n\
         load ⋉ → λ -1 rewind\n\
         rewind Σ → λ -1 rewind\n\
         rewind ⋊ zero → λ +1 qf\n\
         rewind ⋊ nonzero → λ +1 echo\n\
         echo Σ → Σ +1 echo\n\
         echo ⋉ → λ -1 rewind dec\n",
    )
}

/// `k` echoing passes separated by silent rewinds.
pub fn kcopy(k: usize) -> Result<TwoWayFst> {
    if k == 0 {
        return Err(Error::Config("kcopy needs k >= 1".into()));
    }
    let mut text = String::from("initial q0\nfinal qf\nq0 ⋊ → λ +1 p1\n");
    for i in 1..=k {
        text.push_str(&format!("p{i} Σ → Σ +1 p{i}\n"));
        if i == k {
            text.push_str(&format!("p{i} ⋉ → λ +1 qf\n"));
        } else {
            let j = i + 1;
            text.push_str(&format!("p{i} ⋉ → λ -1 r{i}\nr{i} Σ → λ -1 r{i}\nr{i} ⋊ → λ +1 p{j}\n"));
        }
    }
    TwoWayFst::parse(&text)
}

/// Step budget that always suffices for [`kcopy`] on inputs of length `n`.
pub fn kcopy_step_limit(k: usize, n: usize) -> usize {
    2 * k * (n + 2)
}

/// Step budget as a function of input length.
pub type StepBudget = Box<dyn Fn(usize) -> usize + Send + Sync>;

/// The machine computing `task`, with a step budget that suffices for every
/// input length. Sorting has no machine here.
pub fn for_task(task: Task) -> Result<(TwoWayFst, StepBudget)> {
    Ok(match task {
        Task::Identity => (identity(), Box::new(TwoWayFst::default_step_limit)),
        Task::Reversal => (reversal(), Box::new(TwoWayFst::default_step_limit)),
        Task::TotalReduplication => (total_reduplication(), Box::new(TwoWayFst::default_step_limit)),
        Task::QuadraticCopy => (quadratic(), Box::new(TwoWayFst::default_step_limit)),
        Task::KCopy(k) => (kcopy(k)?, Box::new(move |n| kcopy_step_limit(k, n))),
        Task::SortAscending | Task::SortDescending => {
            return Err(Error::Config(format!("no transducer is defined for {task}")))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_machine() {
        let m = total_reduplication();
        assert_eq!(m.transitions().len(), 7);
        assert_eq!(m.run("abc").unwrap().output, "abcabc");
        assert_eq!(m.run("").unwrap().output, "");
        assert_eq!(m.run("a").unwrap().output, "aa");
        assert!(!m.uses_register());
    }

    #[test]
    fn builder_examples() {
        assert_eq!(identity().run("a").unwrap().output, "a");
        let r = identity().run("xyz").unwrap();
        assert_eq!((r.output.as_str(), r.steps), ("xyz", 5));
        assert_eq!(reversal().run("abc").unwrap().output, "cba");
        assert_eq!(reversal().run("ab").unwrap().output, "ba");
        assert_eq!(reversal().run("").unwrap().output, "");
        assert_eq!(quadratic().run("ab").unwrap().output, "abab");
        assert_eq!(quadratic().run("a").unwrap().output, "a");
        assert_eq!(quadratic().run("").unwrap().output, "");
        assert!(quadratic().uses_register());
        assert_eq!(kcopy(3).unwrap().run("ab").unwrap().output, "ababab");
        assert!(kcopy(0).is_err());
    }

    #[test]
    fn quadratic_step_count() {
        for n in 0..12 {
            let w: String = "abcdefghijkl"[..n].to_string();
            let run = quadratic().run(&w).unwrap();
            assert_eq!(run.steps, 2 * n * n + 4 * n + 3);
        }
    }

    #[test]
    fn rejection_and_non_halting() {
        let m = TwoWayFst::parse("initial q0\nfinal qf\nq0 ⋊ → λ +1 q1\nq1 a → a +1 q1\nq1 ⋉ → λ +1 qf\n").unwrap();
        assert!(matches!(m.run("ab"), Err(Error::Rejected { .. })));
        let spin = TwoWayFst::parse("initial q0\nfinal qf\nq0 ⋊ → λ +1 q1\nq1 Σ → λ -1 q0\nq1 ⋉ → λ +1 qf\n").unwrap();
        assert!(matches!(spin.run("a"), Err(Error::NonHalting(36))));
        assert!(matches!(identity().run("A"), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn parser_rejects_bad_machines() {
        let dup = "initial q0\nfinal qf\nq0 ⋊ → λ +1 q1\nq1 Σ → Σ +1 q1\nq1 a → λ +1 q1\n";
        assert!(matches!(TwoWayFst::parse(dup), Err(Error::Contract(_))));
        assert!(matches!(TwoWayFst::parse("initial q0\nfinal qf\nq0 ⋊ λ +1 q1\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(TwoWayFst::parse("initial q0\nfinal qf\nq0 ⋊ → λ +2 q1\n"), Err(Error::Parse { .. })));
        assert!(matches!(TwoWayFst::parse("final qf\n"), Err(Error::Parse { .. })));
        let ascii = "initial q0\nfinal qf\nq0 |- -> _ +1 q1\nq1 * -> * +1 q1\nq1 -| -> _ +1 qf\n";
        assert_eq!(TwoWayFst::parse(ascii).unwrap(), identity());
    }

    #[test]
    fn display_round_trips() {
        for m in [identity(), reversal(), total_reduplication(), quadratic(), kcopy(4).unwrap()] {
            assert_eq!(TwoWayFst::parse(&m.to_string()).unwrap(), m);
        }
    }
}

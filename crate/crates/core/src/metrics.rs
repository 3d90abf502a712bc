//! Sequence accuracy metrics, per-length breakdowns, rank correlations and
//! the results CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read as IoRead, Write as IoWrite};
use std::str::FromStr;

use crate::cells::Variant;
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::tasks::Task;

/// A target (through `</s>`) and the output generated to the same length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    target: Vec<usize>,
    output: Vec<usize>,
}

impl Outcome {
    pub fn new(target: Vec<usize>, output: Vec<usize>) -> Result<Self> {
        if target.len() != output.len() {
            return Err(Error::Contract(format!(
                "output length {} differs from target length {}",
                output.len(),
                target.len()
            )));
        }
        if target.is_empty() {
            return Err(Error::Contract("empty target".into()));
        }
        Ok(Outcome { target, output })
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn output(&self) -> &[usize] {
        &self.output
    }

    pub fn exact(&self) -> bool {
        self.target == self.output
    }

    pub fn prefix_ratio(&self) -> f64 {
        let n = self.target.iter().zip(&self.output).take_while(|(a, b)| a == b).count();
        n as f64 / self.target.len() as f64
    }

    pub fn overlap_ratio(&self) -> f64 {
        let n = self.target.iter().zip(&self.output).filter(|(a, b)| a == b).count();
        n as f64 / self.target.len() as f64
    }
}

fn mean_over(outcomes: &[Outcome], f: impl Fn(&Outcome) -> f64) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Contract("metrics need at least one outcome".into()));
    }
    Ok(outcomes.iter().map(f).sum::<f64>() / outcomes.len() as f64)
}

/// Fraction of outputs equal to their target at every position.
pub fn full_sequence_accuracy(outcomes: &[Outcome]) -> Result<f64> {
    mean_over(outcomes, |o| if o.exact() { 1.0 } else { 0.0 })
}

/// Mean longest-correct-prefix length over target length.
pub fn first_n_accuracy(outcomes: &[Outcome]) -> Result<f64> {
    mean_over(outcomes, Outcome::prefix_ratio)
}

/// Mean fraction of positions where output and target agree.
pub fn overlap_rate(outcomes: &[Outcome]) -> Result<f64> {
    mean_over(outcomes, Outcome::overlap_ratio)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    FullSeq,
    FirstN,
    Overlap,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::FullSeq, Metric::FirstN, Metric::Overlap];

    pub fn name(self) -> &'static str {
        match self {
            Metric::FullSeq => "full_seq",
            Metric::FirstN => "first_n",
            Metric::Overlap => "overlap",
        }
    }

    pub fn compute(self, outcomes: &[Outcome]) -> Result<f64> {
        match self {
            Metric::FullSeq => full_sequence_accuracy(outcomes),
            Metric::FirstN => first_n_accuracy(outcomes),
            Metric::Overlap => overlap_rate(outcomes),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Metric> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LengthKey {
    Length(usize),
    Aggregate,
}

impl fmt::Display for LengthKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LengthKey::Length(l) => write!(f, "{l}"),
            LengthKey::Aggregate => f.write_str("aggregate"),
        }
    }
}

impl FromStr for LengthKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<LengthKey> {
        if s == "aggregate" {
            return Ok(LengthKey::Aggregate);
        }
        s.parse()
            .map(LengthKey::Length)
            .map_err(|_| Error::Config(format!("length must be an integer or `aggregate`, got `{s}`")))
    }
}

/// What produced the outputs: a trained cell type or a named reference stub.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelTag {
    Cell(Variant),
    Stub(String),
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelTag::Cell(v) => f.write_str(v.name()),
            ModelTag::Stub(s) => write!(f, "stub:{s}"),
        }
    }
}

impl FromStr for ModelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelTag> {
        match s.strip_prefix("stub:") {
            Some(name) if !name.is_empty() => Ok(ModelTag::Stub(name.to_string())),
            Some(_) => Err(Error::Config("empty stub name".into())),
            None => s.parse().map(ModelTag::Cell),
        }
    }
}

impl From<Variant> for ModelTag {
    fn from(v: Variant) -> Self {
        ModelTag::Cell(v)
    }
}

/// Identifies the model run and split a block of records belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RecordLabels {
    pub task: Task,
    pub variant: ModelTag,
    pub attention: bool,
    pub run: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub labels: RecordLabels,
    pub length: LengthKey,
    pub metric: Metric,
    pub value: f64,
}

/// All three metrics for each input length, then over all outcomes.
/// Yields `3 * (lengths + 1)` records.
pub fn per_length_breakdown(
    groups: &BTreeMap<usize, Vec<Outcome>>,
    labels: &RecordLabels,
) -> Result<Vec<MetricsRecord>> {
    let mut records = Vec::with_capacity(3 * (groups.len() + 1));
    let mut all = Vec::new();
    for (&len, outcomes) in groups {
        for metric in Metric::ALL {
            records.push(MetricsRecord {
                labels: labels.clone(),
                length: LengthKey::Length(len),
                metric,
                value: metric.compute(outcomes)?,
            });
        }
        all.extend_from_slice(outcomes);
    }
    for metric in Metric::ALL {
        records.push(MetricsRecord {
            labels: labels.clone(),
            length: LengthKey::Aggregate,
            metric,
            value: metric.compute(&all)?,
        });
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Correlation {
    /// Kendall's tau-b.
    Kendall,
    /// Spearman's rho on average ranks.
    Spearman,
}

impl FromStr for Correlation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Correlation> {
        match s {
            "kendall" => Ok(Correlation::Kendall),
            "spearman" => Ok(Correlation::Spearman),
            _ => Err(Error::Config(format!("unknown correlation `{s}`"))),
        }
    }
}

/// Rank correlation of paired samples. NaN when either list is constant.
pub fn rank_correlation(xs: &[f64], ys: &[f64], method: Correlation) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Contract(format!("{} vs {} samples", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Contract("correlation needs at least two points".into()));
    }
    Ok(match method {
        Correlation::Kendall => kendall_tau_b(xs, ys),
        Correlation::Spearman => pearson(&average_ranks(xs), &average_ranks(ys)),
    })
}

fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i].partial_cmp(&xs[j]).unwrap_or(std::cmp::Ordering::Equal);
            let dy = ys[i].partial_cmp(&ys[j]).unwrap_or(std::cmp::Ordering::Equal);
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {
                    tied_x += 1;
                    tied_y += 1;
                }
                (Equal, _) => tied_x += 1,
                (_, Equal) => tied_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = (((pairs - tied_x) * (pairs - tied_y)) as f64).sqrt();
    (concordant - discordant) as f64 / denom
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Results CSV header.
pub const CSV_HEADER: [&str; 8] = ["task", "variant", "attention", "run", "split", "length", "metric", "value"];

/// Shortest decimal that agrees with `v` to 12 significant digits.
pub fn format_value(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    let s = rounded.to_string();
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

pub fn write_csv<W: IoWrite>(w: W, records: &[MetricsRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        let l = &r.labels;
        out.write_record([
            l.task.to_string(),
            l.variant.to_string(),
            l.attention.to_string(),
            l.run.to_string(),
            l.split.name().to_string(),
            r.length.to_string(),
            r.metric.name().to_string(),
            format_value(r.value),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a results CSV. Errors carry the 1-based line number.
pub fn read_csv<R: IoRead>(r: R) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let field = |k: usize| row.get(k).unwrap_or("");
        let bad = |what: &str, e: &dyn fmt::Display| Error::Parse {
            line,
            msg: format!("bad {what}: {e}"),
        };
        if row.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()),
            });
        }
        let value: f64 = field(7).parse().map_err(|e| bad("value", &e))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Parse {
                line,
                msg: format!("value {value} outside [0, 1]"),
            });
        }
        records.push(MetricsRecord {
            labels: RecordLabels {
                task: field(0).parse().map_err(|e| bad("task", &e))?,
                variant: field(1).parse().map_err(|e| bad("variant", &e))?,
                attention: field(2).parse().map_err(|e| bad("attention", &e))?,
                run: field(3).parse().map_err(|e| bad("run", &e))?,
                split: field(4).parse().map_err(|e| bad("split", &e))?,
            },
            length: field(5).parse().map_err(|e| bad("length", &e))?,
            metric: field(6).parse().map_err(|e| bad("metric", &e))?,
            value,
        });
    }
    Ok(records)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab;

    fn oc(t: &str, o: &str) -> Outcome {
        Outcome::new(vocab::decoder_target(t).unwrap(), vocab::decoder_target(o).unwrap()).unwrap()
    }

    #[test]
    fn hand_cases() {
        let o = [oc("abcd", "abxd")];
        assert!((first_n_accuracy(&o).unwrap() - 0.4).abs() < 1e-12);
        assert!((overlap_rate(&o).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(full_sequence_accuracy(&o).unwrap(), 0.0);
        assert_eq!(full_sequence_accuracy(&[oc("ab", "ab")]).unwrap(), 1.0);
        assert_eq!(first_n_accuracy(&[oc("ab", "bb")]).unwrap(), 0.0);
        assert_eq!(overlap_rate(&[oc("ab", "ba")]).unwrap(), 1.0 / 3.0);
        let four = [oc("a", "a"), oc("a", "b"), oc("b", "a"), oc("ab", "aa")];
        assert_eq!(full_sequence_accuracy(&four).unwrap(), 0.25);
        assert!(full_sequence_accuracy(&[]).is_err());
        assert!(Outcome::new(vec![1], vec![1, 2]).is_err());
    }

    #[test]
    fn breakdown_shape() {
        let labels = RecordLabels {
            task: Task::Identity,
            variant: Variant::Gru.into(),
            attention: true,
            run: 0,
            split: Split::Test,
        };
        let mut groups = BTreeMap::new();
        groups.insert(2, vec![oc("ab", "ab")]);
        groups.insert(3, vec![oc("abc", "abc"), oc("cba", "cba")]);
        let recs = per_length_breakdown(&groups, &labels).unwrap();
        assert_eq!(recs.len(), 9);
        assert!(recs.iter().all(|r| r.value == 1.0));
    }

    #[test]
    fn correlation_examples() {
        let k = rank_correlation(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0], Correlation::Kendall).unwrap();
        let s = rank_correlation(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0], Correlation::Spearman).unwrap();
        assert!((k - 1.0 / 3.0).abs() < 1e-12);
        assert!((s - 0.5).abs() < 1e-12);
        for m in [Correlation::Kendall, Correlation::Spearman] {
            assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 9.0], m).unwrap(), 1.0);
            assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], m).unwrap(), -1.0);
            assert!(rank_correlation(&[1.0], &[1.0], m).is_err());
            assert!(rank_correlation(&[1.0, 2.0], &[1.0], m).is_err());
        }
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(0.25), "0.25");
        assert_eq!(format_value(1.0), "1");
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_value(0.1 + 0.2), "0.3");
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let labels = RecordLabels {
            task: Task::KCopy(40),
            variant: ModelTag::Stub("echo".into()),
            attention: false,
            run: 2,
            split: Split::Gen,
        };
        let recs = vec![
            MetricsRecord { labels: labels.clone(), length: LengthKey::Length(12), metric: Metric::FirstN, value: 0.125 },
            MetricsRecord { labels: labels.clone(), length: LengthKey::Aggregate, metric: Metric::Overlap, value: 1.0 },
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("task,variant,attention,run,split,length,metric,value\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), recs);
        let srnn = RecordLabels { variant: Variant::Srnn.into(), ..labels };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[MetricsRecord { labels: srnn, length: LengthKey::Aggregate, metric: Metric::FullSeq, value: 0.5 }]).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("kcopy:40,srnn,false,2,gen,aggregate,full_seq,0.5"));
        let broken = format!("{text}identity,gru,true,0,test,3,full_seq,oops\n");
        assert!(matches!(read_csv(broken.as_bytes()), Err(Error::Parse { line: 4, .. })));
    }
}

//! Alphabets, traces and datasets, plus ingestion of raw assessment logs.
//!
//! A raw log holds one row per answered question. Each row is mapped to one
//! of six (dis)engagement behavioral patterns from its correctness, the
//! confidence the student declared and whether corrective feedback was read
//! afterwards. Rows are grouped into login-logout sessions, and every
//! session of at least two actions becomes a [`Trace`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical behavioral-pattern order. Transition-matrix indices follow it.
pub const CANONICAL_SYMBOLS: [&str; 6] = ["HK", "LK", "FG", "LE", "KG", "NI"];

/// Ordered set of distinct event symbols.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Alphabet {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::Alphabet("alphabet must contain at least one symbol".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Alphabet(format!("symbol {i} is empty")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Alphabet(format!("duplicate symbol `{s}`")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// The six-pattern alphabet `[HK, LK, FG, LE, KG, NI]`.
    pub fn canonical() -> Self {
        Self::new(CANONICAL_SYMBOLS).expect("canonical alphabet is valid")
    }

    /// Generic alphabet `S0 .. S{m-1}`.
    pub fn numbered(m: usize) -> Result<Self> {
        Self::new((0..m).map(|i| format!("S{i}")))
    }

    /// Picks the canonical alphabet when every symbol belongs to it, and
    /// otherwise the lexically sorted set of observed symbols.
    pub fn infer<'a>(observed: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let seen: BTreeSet<&str> = observed.into_iter().collect();
        if seen.iter().all(|s| CANONICAL_SYMBOLS.contains(s)) {
            return Ok(Self::canonical());
        }
        Self::new(seen)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn is_canonical(&self) -> bool {
        self.symbols.iter().map(String::as_str).eq(CANONICAL_SYMBOLS)
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.symbols[index]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Encodes a list of symbol names.
    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<usize>> {
        symbols
            .iter()
            .map(|s| {
                let s = s.as_ref();
                self.index_of(s)
                    .ok_or_else(|| Error::AlphabetMismatch(format!("unknown symbol `{s}`")))
            })
            .collect()
    }
}

impl fmt::Debug for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.symbols).finish()
    }
}

impl TryFrom<Vec<String>> for Alphabet {
    type Error = Error;

    fn try_from(value: Vec<String>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Alphabet> for Vec<String> {
    fn from(value: Alphabet) -> Self {
        value.symbols
    }
}

/// One session's ordered events, encoded as indices into an [`Alphabet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub student_id: String,
    pub trace_id: String,
    pub events: Vec<usize>,
}

impl Trace {
    pub fn new(student_id: impl Into<String>, trace_id: impl Into<String>, events: Vec<usize>) -> Self {
        Self { student_id: student_id.into(), trace_id: trace_id.into(), events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Fraction of the trace occupied by each symbol. Components sum to one.
pub fn proportional_counts(trace: &Trace, alphabet_size: usize) -> Vec<f64> {
    let mut counts = vec![0usize; alphabet_size];
    for &e in &trace.events {
        counts[e] += 1;
    }
    let len = trace.len() as f64;
    counts.into_iter().map(|c| c as f64 / len).collect()
}

/// A set of traces over one alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    alphabet: Alphabet,
    traces: Vec<Trace>,
}

impl Dataset {
    /// Validates that trace ids are unique, every event indexes the
    /// alphabet and every trace has at least two events.
    pub fn new(alphabet: Alphabet, traces: Vec<Trace>) -> Result<Self> {
        let m = alphabet.len();
        let mut ids = HashSet::with_capacity(traces.len());
        for t in &traces {
            if !ids.insert(t.trace_id.as_str()) {
                return Err(Error::Trace { trace: t.trace_id.clone(), reason: "duplicate trace id".into() });
            }
            if t.len() < 2 {
                return Err(Error::Trace {
                    trace: t.trace_id.clone(),
                    reason: format!("length {} is below the minimum of 2", t.len()),
                });
            }
            if let Some(&bad) = t.events.iter().find(|&&e| e >= m) {
                return Err(Error::Trace {
                    trace: t.trace_id.clone(),
                    reason: format!("event index {bad} out of range for alphabet of size {m}"),
                });
            }
        }
        Ok(Self { alphabet, traces })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.traces.iter().map(Trace::len).sum()
    }

    /// Distinct student ids in sorted order.
    pub fn students(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.traces.iter().map(|t| t.student_id.as_str()).collect();
        set.into_iter().collect()
    }

    /// Traces satisfying `keep`, in their original order.
    pub fn filter(&self, mut keep: impl FnMut(&Trace) -> bool) -> Dataset {
        Dataset {
            alphabet: self.alphabet.clone(),
            traces: self.traces.iter().filter(|t| keep(t)).cloned().collect(),
        }
    }

    /// Per-symbol share of all events, as percentages.
    pub fn symbol_distribution(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.alphabet.len()];
        for e in self.traces.iter().flat_map(|t| &t.events) {
            counts[*e] += 1;
        }
        let total = self.event_count().max(1) as f64;
        counts.into_iter().map(|c| 100.0 * c as f64 / total).collect()
    }
}

/// The six (dis)engagement behavioral patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BehaviorPattern {
    /// Correct answer, high confidence.
    HighKnowledge,
    /// Correct answer, low confidence.
    LessKnowledge,
    /// Wrong answer, high confidence, feedback read.
    FillKnowledgeGap,
    /// Wrong answer, low confidence, feedback read.
    Learn,
    /// Wrong answer, high confidence, feedback skipped.
    KnowledgeGap,
    /// Wrong answer, low confidence, feedback skipped.
    NotInterested,
}

impl BehaviorPattern {
    /// Index in the canonical alphabet.
    pub fn index(self) -> usize {
        match self {
            Self::HighKnowledge => 0,
            Self::LessKnowledge => 1,
            Self::FillKnowledgeGap => 2,
            Self::Learn => 3,
            Self::KnowledgeGap => 4,
            Self::NotInterested => 5,
        }
    }

    pub fn code(self) -> &'static str {
        CANONICAL_SYMBOLS[self.index()]
    }

    /// Feedback seeking only distinguishes wrong answers.
    pub fn classify(correct: bool, high_confidence: bool, feedback_seek: bool) -> Self {
        match (correct, high_confidence, feedback_seek) {
            (true, true, _) => Self::HighKnowledge,
            (true, false, _) => Self::LessKnowledge,
            (false, true, true) => Self::FillKnowledgeGap,
            (false, true, false) => Self::KnowledgeGap,
            (false, false, true) => Self::Learn,
            (false, false, false) => Self::NotInterested,
        }
    }
}

/// One logged problem-solving action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    pub student_id: String,
    pub session_id: String,
    pub timestamp: String,
    pub correct: bool,
    pub high_confidence: bool,
    pub feedback_seek: bool,
    /// Seconds spent on the corrective feedback, when the log records it.
    #[serde(default)]
    pub feedback_seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IngestOptions {
    /// Feedback read for less than this many seconds is not counted as
    /// feedback seeking. Zero disables the check. Rows without a recorded
    /// duration are taken at face value.
    pub min_feedback_seconds: f64,
}

/// Maps one action to its canonical symbol index.
pub fn map_action(action: &RawAction) -> usize {
    map_action_with(action, &IngestOptions::default())
}

pub fn map_action_with(action: &RawAction, options: &IngestOptions) -> usize {
    let long_enough = options.min_feedback_seconds <= 0.0
        || action.feedback_seconds.is_none_or(|s| s >= options.min_feedback_seconds);
    BehaviorPattern::classify(action.correct, action.high_confidence, action.feedback_seek && long_enough).index()
}

/// Output of [`build_traces`].
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    /// Sessions discarded for having fewer than two actions.
    pub dropped: usize,
}

pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    const NAIVE: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"];
    NAIVE
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|t| t.and_utc())
}

pub fn build_traces(actions: &[RawAction]) -> Result<Ingested> {
    build_traces_with(actions, &IngestOptions::default())
}

/// Groups actions by `(student_id, session_id)` in order of first
/// appearance, orders each group by timestamp (equal timestamps keep file
/// order), and drops sessions shorter than two actions.
pub fn build_traces_with(actions: &[RawAction], options: &IngestOptions) -> Result<Ingested> {
    let mut group_of: HashMap<(&str, &str), usize> = HashMap::new();
    let mut groups: Vec<Vec<(DateTime<Utc>, usize)>> = Vec::new();
    for (i, a) in actions.iter().enumerate() {
        let ts = parse_timestamp(&a.timestamp).ok_or_else(|| Error::Ingest {
            record: i + 1,
            reason: format!(
                "malformed timestamp `{}` (student `{}`, session `{}`)",
                a.timestamp, a.student_id, a.session_id
            ),
        })?;
        let g = *group_of.entry((a.student_id.as_str(), a.session_id.as_str())).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push((ts, i));
    }

    let mut traces = Vec::with_capacity(groups.len());
    let mut dropped = 0;
    for mut group in groups {
        if group.len() < 2 {
            dropped += 1;
            continue;
        }
        group.sort_by_key(|&(ts, _)| ts);
        let first = &actions[group[0].1];
        let events = group.iter().map(|&(_, i)| map_action_with(&actions[i], options)).collect();
        traces.push(Trace::new(
            first.student_id.clone(),
            format!("{}/{}", first.student_id, first.session_id),
            events,
        ));
    }
    Ok(Ingested { dataset: Dataset::new(Alphabet::canonical(), traces)?, dropped })
}

#[derive(Debug, Deserialize)]
struct RawRow {
    student_id: String,
    session_id: String,
    timestamp: String,
    correct: String,
    high_confidence: String,
    feedback_seek: String,
    #[serde(default)]
    feedback_seconds: Option<String>,
}

fn parse_flag(value: &str, column: &str, line: usize) -> Result<bool> {
    match value.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse { line, reason: format!("column `{column}` must be 0 or 1, got `{other}`") }),
    }
}

/// Reads a comma-delimited raw log. Error positions are file line numbers.
pub fn read_raw_log(reader: impl Read) -> Result<Vec<RawAction>> {
    const REQUIRED: [&str; 6] = ["student_id", "session_id", "timestamp", "correct", "high_confidence", "feedback_seek"];
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in REQUIRED {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Parse { line: 1, reason: format!("missing header column `{col}`") });
        }
    }
    let mut actions = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: RawRow = record.deserialize(Some(&headers)).map_err(|e| Error::Parse { line, reason: e.to_string() })?;
        for (value, column) in [(&row.student_id, "student_id"), (&row.session_id, "session_id")] {
            if value.is_empty() {
                return Err(Error::Parse { line, reason: format!("empty `{column}`") });
            }
        }
        if parse_timestamp(&row.timestamp).is_none() {
            return Err(Error::Parse { line, reason: format!("malformed timestamp `{}`", row.timestamp) });
        }
        let feedback_seconds = match row.feedback_seconds.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<f64>().map_err(|_| Error::Parse {
                line,
                reason: format!("column `feedback_seconds` is not a number: `{s}`"),
            })?),
        };
        actions.push(RawAction {
            correct: parse_flag(&row.correct, "correct", line)?,
            high_confidence: parse_flag(&row.high_confidence, "high_confidence", line)?,
            feedback_seek: parse_flag(&row.feedback_seek, "feedback_seek", line)?,
            student_id: row.student_id,
            session_id: row.session_id,
            timestamp: row.timestamp,
            feedback_seconds,
        });
    }
    Ok(actions)
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub student: String,
    pub trace: String,
    pub events: Vec<String>,
}

/// Writes one JSON object per trace.
pub fn write_trace_file(dataset: &Dataset, mut out: impl Write) -> Result<()> {
    let alphabet = dataset.alphabet();
    for t in dataset.traces() {
        let record = TraceRecord {
            student: t.student_id.clone(),
            trace: t.trace_id.clone(),
            events: t.events.iter().map(|&e| alphabet.symbol(e).to_owned()).collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_records(reader: impl BufRead) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: i + 1, reason: format!("bad trace record: {e}") })?;
        records.push(record);
    }
    Ok(records)
}

/// Reads a trace file. Without an explicit alphabet one is inferred with
/// [`Alphabet::infer`].
pub fn read_trace_file(reader: impl BufRead, alphabet: Option<&Alphabet>) -> Result<Dataset> {
    let records = read_trace_records(reader)?;
    let alphabet = match alphabet {
        Some(a) => a.clone(),
        None => Alphabet::infer(records.iter().flat_map(|r| r.events.iter().map(String::as_str)))?,
    };
    let traces = records
        .into_iter()
        .map(|r| {
            let events = alphabet.encode(&r.events).map_err(|e| Error::Trace { trace: r.trace.clone(), reason: e.to_string() })?;
            Ok(Trace::new(r.student, r.trace, events))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(alphabet, traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn action(student: &str, session: &str, ts: &str, c: bool, h: bool, s: bool) -> RawAction {
        RawAction {
            student_id: student.into(),
            session_id: session.into(),
            timestamp: ts.into(),
            correct: c,
            high_confidence: h,
            feedback_seek: s,
            feedback_seconds: None,
        }
    }

    fn encode(symbols: &[&str]) -> Trace {
        Trace::new("s", "t", Alphabet::canonical().encode(symbols).unwrap())
    }

    #[test]
    fn alphabet_rejects_duplicates_and_empty() {
        assert!(Alphabet::new(["A", "A"]).is_err());
        assert!(Alphabet::new(["A", ""]).is_err());
        assert!(Alphabet::new(Vec::<String>::new()).is_err());
        let a = Alphabet::new(["x", "y", "z"]).unwrap();
        for (i, s) in a.symbols().iter().enumerate() {
            assert_eq!(a.index_of(s), Some(i));
        }
    }

    #[test]
    fn alphabet_inference() {
        assert!(Alphabet::infer(["NI", "HK"]).unwrap().is_canonical());
        let a = Alphabet::infer(["b", "a", "b"]).unwrap();
        assert_eq!(a.symbols(), ["a", "b"]);
    }

    #[test]
    fn table_one_mapping() {
        let hk = action("s", "1", "2020-01-01T00:00:00Z", true, true, false);
        assert_eq!(CANONICAL_SYMBOLS[map_action(&hk)], "HK");
        let fg = action("s", "1", "2020-01-01T00:00:00Z", false, true, true);
        assert_eq!(CANONICAL_SYMBOLS[map_action(&fg)], "FG");
        let ni = action("s", "1", "2020-01-01T00:00:00Z", false, false, false);
        assert_eq!(CANONICAL_SYMBOLS[map_action(&ni)], "NI");
    }

    #[test]
    fn mapping_is_total_with_six_outputs() {
        let mut outputs = HashSet::new();
        for bits in 0..8u8 {
            let a = action("s", "1", "2020-01-01T00:00:00Z", bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
            let out = map_action(&a);
            assert_eq!(out, map_action(&a));
            outputs.insert(out);
        }
        assert_eq!(outputs.len(), 6);
        // feedback collapses for correct answers
        let lk1 = action("s", "1", "2020-01-01T00:00:00Z", true, false, true);
        let lk2 = action("s", "1", "2020-01-01T00:00:00Z", true, false, false);
        assert_eq!(map_action(&lk1), 1);
        assert_eq!(map_action(&lk2), 1);
        let le = action("s", "1", "2020-01-01T00:00:00Z", false, false, true);
        let kg = action("s", "1", "2020-01-01T00:00:00Z", false, true, false);
        assert_eq!(BehaviorPattern::classify(false, false, true).code(), "LE");
        assert_eq!(CANONICAL_SYMBOLS[map_action(&le)], "LE");
        assert_eq!(CANONICAL_SYMBOLS[map_action(&kg)], "KG");
    }

    #[test]
    fn feedback_time_threshold() {
        let mut fg = action("s", "1", "2020-01-01T00:00:00Z", false, true, true);
        fg.feedback_seconds = Some(2.0);
        let strict = IngestOptions { min_feedback_seconds: 5.0 };
        assert_eq!(map_action_with(&fg, &strict), BehaviorPattern::KnowledgeGap.index());
        assert_eq!(map_action(&fg), BehaviorPattern::FillKnowledgeGap.index());
    }

    #[test]
    fn proportional_counts_examples() {
        assert_eq!(proportional_counts(&encode(&["HK", "FG", "KG", "HK"]), 6), vec![0.5, 0.0, 0.25, 0.0, 0.25, 0.0]);
        assert_eq!(proportional_counts(&encode(&["HK", "HK", "HK"]), 6), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(proportional_counts(&encode(&["LK", "LE"]), 6), vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn one_session_of_four() {
        let actions: Vec<_> = (0..4)
            .map(|i| action("alice", "s1", &format!("2020-01-01T10:0{i}:00Z"), true, i % 2 == 0, false))
            .collect();
        let out = build_traces(&actions).unwrap();
        assert_eq!(out.dataset.len(), 1);
        assert_eq!(out.dataset.traces()[0].events, vec![0, 1, 0, 1]);
        assert_eq!(out.dropped, 0);
    }

    #[test]
    fn singleton_session_dropped() {
        let actions = vec![
            action("alice", "s1", "2020-01-01T10:00:00Z", true, true, false),
            action("bob", "s1", "2020-01-01T10:00:00Z", true, true, false),
            action("bob", "s1", "2020-01-01T10:01:00Z", false, false, false),
        ];
        let out = build_traces(&actions).unwrap();
        assert_eq!(out.dropped, 1);
        assert_eq!(out.dataset.len(), 1);
        assert_eq!(out.dataset.traces()[0].student_id, "bob");
    }

    #[test]
    fn interleaved_sessions_restore_time_order() {
        // (student, ts, correct, high, seek); file order shuffled
        let actions = vec![
            action("b", "x", "2021-03-01T09:03:00Z", false, false, false), // NI
            action("a", "x", "2021-03-01T09:02:00Z", false, true, true),   // FG
            action("b", "x", "2021-03-01T09:01:00Z", true, true, false),   // HK
            action("a", "x", "2021-03-01T09:00:00Z", true, false, false),  // LK
            action("a", "x", "2021-03-01T09:05:00Z", false, false, true),  // LE
            action("b", "x", "2021-03-01T09:02:30Z", false, true, false),  // KG
        ];
        let out = build_traces(&actions).unwrap();
        let alpha = out.dataset.alphabet().clone();
        let decoded: Vec<(String, Vec<&str>)> = out
            .dataset
            .traces()
            .iter()
            .map(|t| (t.student_id.clone(), t.events.iter().map(|&e| alpha.symbol(e)).collect()))
            .collect();
        assert_eq!(
            decoded,
            vec![("b".to_string(), vec!["HK", "KG", "NI"]), ("a".to_string(), vec!["LK", "FG", "LE"])]
        );
    }

    #[test]
    fn equal_timestamps_keep_file_order() {
        let actions = vec![
            action("a", "x", "2021-03-01T09:00:00Z", false, false, false),
            action("a", "x", "2021-03-01T09:00:00Z", true, true, false),
        ];
        let out = build_traces(&actions).unwrap();
        assert_eq!(out.dataset.traces()[0].events, vec![5, 0]);
    }

    #[test]
    fn malformed_timestamp_names_record() {
        let actions = vec![
            action("a", "x", "2021-03-01T09:00:00Z", true, true, false),
            action("a", "x", "yesterday", true, true, false),
        ];
        match build_traces(&actions) {
            Err(Error::Ingest { record, reason }) => {
                assert_eq!(record, 2);
                assert!(reason.contains("yesterday"));
            }
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn raw_log_parsing() {
        let text = "student_id,session_id,timestamp,correct,high_confidence,feedback_seek\n\
                    s1,a,2020-01-01T00:00:00Z,1,1,0\n\
                    s1,a,2020-01-01 00:01:00,0,1,1\n";
        let actions = read_raw_log(text.as_bytes()).unwrap();
        assert_eq!(actions.len(), 2);
        assert!(actions[1].feedback_seek && !actions[1].correct);

        let bad = "student_id,session_id,timestamp,correct,high_confidence,feedback_seek\n\
                   s1,a,2020-01-01T00:00:00Z,1,1,0\n\
                   s1,a,2020-01-01T00:00:00Z,yes,1,0\n";
        match read_raw_log(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        // a quoted field spanning two lines shifts later line numbers
        let quoted = "student_id,session_id,timestamp,correct,high_confidence,feedback_seek\n\
                      \"s\n1\",a,2020-01-01T00:00:00Z,1,1,0\n\
                      s1,a,2020-01-01T00:00:00Z,1,1,2\n";
        match read_raw_log(quoted.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let missing = "student_id,session_id,timestamp,correct\n";
        assert!(read_raw_log(missing.as_bytes()).is_err());
    }

    #[test]
    fn dataset_validation() {
        let a = Alphabet::new(["A", "B"]).unwrap();
        assert!(Dataset::new(a.clone(), vec![Trace::new("s", "t", vec![0])]).is_err());
        assert!(Dataset::new(a.clone(), vec![Trace::new("s", "t", vec![0, 2])]).is_err());
        let dup = vec![Trace::new("s", "t", vec![0, 1]), Trace::new("s", "t", vec![1, 1])];
        assert!(Dataset::new(a, dup).is_err());
    }

    #[test]
    fn trace_file_round_trip() {
        let a = Alphabet::canonical();
        let ds = Dataset::new(
            a.clone(),
            vec![Trace::new("s1", "t1", vec![0, 2, 4]), Trace::new("s2", "t2", vec![5, 5])],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trace_file(&ds, &mut buf).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap();
        assert!(first.starts_with(r#"{"student":"s1","trace":"t1","events":["HK","FG","KG"]}"#));
        let back = read_trace_file(buf.as_slice(), None).unwrap();
        assert_eq!(back, ds);
    }
}

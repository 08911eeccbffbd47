//! Code-sample corpus: data model, ingestion and length filtering.
//!
//! A corpus holds three kinds of functions: unchanged code, vulnerable code,
//! and the fixed version of a vulnerable function. Vulnerable samples are
//! labelled 1, everything else 0. Fixed samples always point at their
//! vulnerable counterpart through a shared `pair_id`.

mod split;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer;

pub use split::{make_split, make_split_with, Partition, Setting, SplitAssignment, SplitError, SplitOptions, SplitRatios};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Unchanged,
    Vulnerable,
    Fixed,
}

impl SetKind {
    pub fn label(self) -> Label {
        match self {
            SetKind::Vulnerable => Label::Vulnerable,
            SetKind::Unchanged | SetKind::Fixed => Label::NonVulnerable,
        }
    }
}

impl SetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SetKind::Unchanged => "unchanged",
            SetKind::Vulnerable => "vulnerable",
            SetKind::Fixed => "fixed",
        }
    }
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unchanged" => Ok(SetKind::Unchanged),
            "vulnerable" => Ok(SetKind::Vulnerable),
            "fixed" => Ok(SetKind::Fixed),
            other => Err(format!("unknown set_kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonVulnerable = 0,
    Vulnerable = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::NonVulnerable
        } else {
            Label::Vulnerable
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// One function from the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSample {
    pub id: String,
    pub source: String,
    pub set_kind: SetKind,
    pub label: Label,
    pub pair_id: Option<String>,
    pub timestamp: Option<NaiveDate>,
    pub token_count: usize,
    /// Set when identifier substitution could not be applied and the source was kept verbatim.
    pub untransformed: bool,
}

impl CodeSample {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        set_kind: SetKind,
        pair_id: Option<String>,
        timestamp: Option<NaiveDate>,
    ) -> Self {
        let source = source.into();
        let token_count = lexer::token_count(&source);
        CodeSample {
            id: id.into(),
            source,
            set_kind,
            label: set_kind.label(),
            pair_id,
            timestamp,
            token_count,
            untransformed: false,
        }
    }
}

/// On-disk record: one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub source: String,
    pub set_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub untransformed: bool,
}

impl From<&CodeSample> for Record {
    fn from(s: &CodeSample) -> Self {
        Record {
            id: s.id.clone(),
            source: s.source.clone(),
            set_kind: match s.set_kind {
                SetKind::Unchanged => "unchanged",
                SetKind::Vulnerable => "vulnerable",
                SetKind::Fixed => "fixed",
            }
            .to_string(),
            pair_id: s.pair_id.clone(),
            date: s.timestamp.map(|d| d.format("%Y-%m-%d").to_string()),
            untransformed: s.untransformed,
        }
    }
}

impl Record {
    fn into_sample(self) -> Result<CodeSample, String> {
        let set_kind: SetKind = self.set_kind.parse()?;
        let timestamp = match &self.date {
            Some(d) => Some(
                NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| format!("bad date {d:?}: {e}"))?,
            ),
            None => None,
        };
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match (set_kind, &self.pair_id) {
            (SetKind::Fixed, None) => return Err("fixed sample without pair_id".into()),
            (SetKind::Unchanged, Some(_)) => return Err("unchanged sample with pair_id".into()),
            _ => {}
        }
        let mut sample = CodeSample::new(self.id, self.source, set_kind, self.pair_id, timestamp);
        sample.untransformed = self.untransformed;
        Ok(sample)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One JSON record per line.
    Jsonl,
    /// A single JSON array of records.
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("{} malformed record(s): {}", .0.len(), join(.0))]
    Malformed(Vec<RecordError>),
    #[error("duplicate sample ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("unresolved pair ids: {}", .0.join(", "))]
    DanglingPairs(Vec<String>),
    #[error("pair id {0:?} links more than one vulnerable/fixed sample")]
    AmbiguousPair(String),
}

fn join(errs: &[RecordError]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Immutable, validated set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    samples: Vec<CodeSample>,
    index: HashMap<String, usize>,
    pub provenance: String,
    pub tokenizer: String,
}

impl Corpus {
    /// Validate and build. Samples keep their input order.
    pub fn new(samples: Vec<CodeSample>, provenance: impl Into<String>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(samples.len());
        let mut dups = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                dups.push(s.id.clone());
            }
        }
        if !dups.is_empty() {
            return Err(CorpusError::DuplicateIds(dups));
        }

        // every pair id must link exactly one vulnerable and one fixed sample
        let mut pairs: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for s in &samples {
            if let Some(p) = &s.pair_id {
                let e = pairs.entry(p.as_str()).or_default();
                match s.set_kind {
                    SetKind::Vulnerable => e.0 += 1,
                    SetKind::Fixed => e.1 += 1,
                    SetKind::Unchanged => {}
                }
            }
        }
        let mut dangling = Vec::new();
        for (p, (v, f)) in &pairs {
            if *v > 1 || *f > 1 {
                return Err(CorpusError::AmbiguousPair(p.to_string()));
            }
            if *v != 1 || *f != 1 {
                dangling.push(p.to_string());
            }
        }
        if !dangling.is_empty() {
            return Err(CorpusError::DanglingPairs(dangling));
        }

        Ok(Corpus {
            samples,
            index,
            provenance: provenance.into(),
            tokenizer: lexer::TOKENIZER_ID.to_string(),
        })
    }

    pub fn empty() -> Self {
        Corpus::new(Vec::new(), "").expect("empty corpus is valid")
    }

    pub fn samples(&self) -> &[CodeSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CodeSample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn count_kind(&self, kind: SetKind) -> usize {
        self.samples.iter().filter(|s| s.set_kind == kind).count()
    }

    /// The other member of a vulnerable/fixed pair.
    pub fn partner(&self, sample: &CodeSample) -> Option<&CodeSample> {
        let pid = sample.pair_id.as_deref()?;
        self.samples
            .iter()
            .find(|o| o.id != sample.id && o.pair_id.as_deref() == Some(pid) && o.set_kind != SetKind::Unchanged)
    }

    /// All (vulnerable, fixed) pairs in corpus order of the vulnerable member.
    pub fn pairs(&self) -> Vec<(&CodeSample, &CodeSample)> {
        let fixed: HashMap<&str, &CodeSample> = self
            .samples
            .iter()
            .filter(|s| s.set_kind == SetKind::Fixed)
            .filter_map(|s| s.pair_id.as_deref().map(|p| (p, s)))
            .collect();
        self.samples
            .iter()
            .filter(|s| s.set_kind == SetKind::Vulnerable)
            .filter_map(|v| v.pair_id.as_deref().and_then(|p| fixed.get(p)).map(|f| (v, *f)))
            .collect()
    }

    /// Replace every sample through `f`, keeping ids and pair links intact.
    pub fn map_samples<F>(&self, f: F) -> Result<Corpus, CorpusError>
    where
        F: FnMut(&CodeSample) -> CodeSample,
    {
        let samples = self.samples.iter().map(f).collect();
        let mut c = Corpus::new(samples, self.provenance.clone())?;
        c.tokenizer = self.tokenizer.clone();
        Ok(c)
    }

    pub fn records(&self) -> Vec<Record> {
        self.samples.iter().map(Record::from).collect()
    }

    /// Serialize in the line-delimited corpus format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parse corpus text in the given format.
pub fn parse_corpus(text: &str, format: CorpusFormat, provenance: &str) -> Result<Corpus, CorpusError> {
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    match format {
        CorpusFormat::Jsonl => {
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<Record>(line)
                    .map_err(|e| e.to_string())
                    .and_then(Record::into_sample);
                match parsed {
                    Ok(s) => samples.push(s),
                    Err(message) => errors.push(RecordError { line: n + 1, message }),
                }
            }
        }
        CorpusFormat::Json => {
            if !text.trim().is_empty() {
                let values: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| {
                    CorpusError::Malformed(vec![RecordError { line: e.line(), message: e.to_string() }])
                })?;
                for (n, v) in values.into_iter().enumerate() {
                    let parsed = serde_json::from_value::<Record>(v)
                        .map_err(|e| e.to_string())
                        .and_then(Record::into_sample);
                    match parsed {
                        // array element index stands in for a line number
                        Ok(s) => samples.push(s),
                        Err(message) => errors.push(RecordError { line: n + 1, message }),
                    }
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(CorpusError::Malformed(errors));
    }
    Corpus::new(samples, provenance)
}

/// Read a corpus file.
pub fn ingest_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text, format, &format!("ingested from {}", path.display()))
}

/// Keep samples whose token count is within `limit`; a pair is dropped as a unit.
pub fn filter_by_token_limit(corpus: &Corpus, limit: usize) -> Corpus {
    assert!(limit > 0, "token limit must be positive");
    let dropped_pairs: HashSet<&str> = corpus
        .samples()
        .iter()
        .filter(|s| s.token_count > limit)
        .filter_map(|s| s.pair_id.as_deref())
        .collect();
    let kept: Vec<CodeSample> = corpus
        .samples()
        .iter()
        .filter(|s| s.token_count <= limit)
        .filter(|s| s.pair_id.as_deref().is_none_or(|p| !dropped_pairs.contains(p)))
        .cloned()
        .collect();
    let mut out = Corpus::new(kept, format!("{}; token limit {limit}", corpus.provenance))
        .expect("filtering preserves corpus invariants");
    out.tokenizer = corpus.tokenizer.clone();
    out
}

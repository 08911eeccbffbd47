//! Classification metrics, per-setting evaluation and the fix-pair
//! same-label diagnostic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::write_atomic;
use crate::corpus::{CodeSample, Corpus, Label, SetKind, Setting, SplitAssignment};
use crate::encoder::PathInput;
use crate::protogame::{Model, ProtoError, TrainingLog};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("report for setting {requested} needs a split built for it, got a {found} split")]
    SettingMismatch { requested: Setting, found: Setting },
    #[error("time split violated: latest training date {train_max} is after earliest test date {test_min}")]
    TimeOrder { train_max: String, test_min: String },
    #[error("time split sample {0} has no date")]
    MissingDate(String),
    #[error("split references sample {0}, which is not in the corpus")]
    MissingSample(String),
    #[error("pair list is empty")]
    EmptyPairs,
    #[error("test partition is empty")]
    EmptyTest,
    #[error(transparent)]
    Model(#[from] ProtoError),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Vulnerable, Label::Vulnerable) => self.tp += 1,
            (Label::NonVulnerable, Label::Vulnerable) => self.fp += 1,
            (Label::NonVulnerable, Label::NonVulnerable) => self.tn += 1,
            (Label::Vulnerable, Label::NonVulnerable) => self.fn_ += 1,
        }
    }

    pub fn from_labels(truth: &[Label], predicted: &[Label]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            c.add(t, p);
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Which metrics hit a zero denominator and were reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub accuracy: bool,
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl UndefinedFlags {
    pub fn any(&self) -> bool {
        self.accuracy || self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: UndefinedFlags,
}

fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let mut u = UndefinedFlags::default();
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp, &mut u.precision);
    let recall = ratio(tp, tp + fn_, &mut u.recall);
    let f1 = ratio(2.0 * precision * recall, precision + recall, &mut u.f1);
    let accuracy = ratio(tp + tn, tp + fp + tn + fn_, &mut u.accuracy);
    Metrics { accuracy, precision, recall, f1, undefined: u }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub id: String,
    pub set_kind: SetKind,
    pub label: Label,
    pub predicted: Label,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: UndefinedFlags,
    pub pair_same_label_rate: Option<f64>,
    pub n_pairs: usize,
    /// Test-partition predictions in id order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<SamplePrediction>,
}

impl EvalReport {
    pub fn from_predictions(setting: Setting, predictions: Vec<SamplePrediction>, pair_rate: Option<(f64, usize)>) -> Self {
        let mut counts = ConfusionCounts::default();
        for p in &predictions {
            counts.add(p.label, p.predicted);
        }
        let m = metrics(&counts);
        EvalReport {
            setting,
            counts,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            undefined: m.undefined,
            pair_same_label_rate: pair_rate.map(|p| p.0),
            n_pairs: pair_rate.map_or(0, |p| p.1),
            predictions,
        }
    }

    /// The report without per-sample rows.
    pub fn summary(&self) -> EvalReport {
        EvalReport { predictions: Vec::new(), ..self.clone() }
    }
}

/// Supplies trunk inputs for samples on demand.
pub trait SampleSource {
    fn inputs(&self, sample: &CodeSample) -> Result<Vec<PathInput>, EvalError>;
}

/// Fraction of (vulnerable, fixed) pairs given the same label.
pub fn pair_same_label_rate(model: &Model, pairs: &[(Vec<PathInput>, Vec<PathInput>)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyPairs);
    }
    let mut same = 0usize;
    for (v, f) in pairs {
        if model.predict_inputs(v)?.label == model.predict_inputs(f)?.label {
            same += 1;
        }
    }
    Ok(same as f64 / pairs.len() as f64)
}

fn compatible(requested: Setting, found: Setting) -> bool {
    // identifier substitution reuses the original partition over renamed code
    requested == found || (requested == Setting::IdentSubst && found == Setting::Original)
}

/// Evaluate on the test partition of `split`.
///
/// Pairs whose vulnerable member is under test and whose fixed member is
/// either under test or outside every partition are scored with the
/// same-label rate; PAIR reports always carry it.
pub fn evaluate_setting(
    model: &Model,
    setting: Setting,
    corpus: &Corpus,
    split: &SplitAssignment,
    source: &dyn SampleSource,
) -> Result<EvalReport, EvalError> {
    if !compatible(setting, split.setting) {
        return Err(EvalError::SettingMismatch { requested: setting, found: split.setting });
    }
    if split.test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let lookup = |id: &str| corpus.get(id).ok_or_else(|| EvalError::MissingSample(id.to_string()));
    if setting == Setting::Time {
        let date = |id: &String| -> Result<_, EvalError> { lookup(id)?.timestamp.ok_or_else(|| EvalError::MissingDate(id.clone())) };
        let train_max = split.train.iter().map(date).collect::<Result<Vec<_>, _>>()?.into_iter().max();
        let test_min = split.test.iter().map(date).collect::<Result<Vec<_>, _>>()?.into_iter().min();
        if let (Some(a), Some(b)) = (train_max, test_min) {
            // ties at the boundary are allowed
            if a > b {
                return Err(EvalError::TimeOrder { train_max: a.to_string(), test_min: b.to_string() });
            }
        }
    }

    let mut inputs: BTreeMap<&str, Vec<PathInput>> = BTreeMap::new();
    let mut predictions = Vec::with_capacity(split.test.len());
    for id in &split.test {
        let s = lookup(id)?;
        let x = source.inputs(s)?;
        let p = model.predict_inputs(&x)?;
        predictions.push(SamplePrediction {
            id: id.clone(),
            set_kind: s.set_kind,
            label: s.label,
            predicted: p.label,
            probability: p.probability,
        });
        inputs.insert(s.id.as_str(), x);
    }

    let mut pairs = Vec::new();
    for id in &split.test {
        let s = lookup(id)?;
        if s.set_kind != SetKind::Vulnerable {
            continue;
        }
        let Some(f) = corpus.partner(s) else { continue };
        let f_inputs = match split.partition_of(&f.id) {
            Some(crate::corpus::Partition::Test) => inputs[f.id.as_str()].clone(),
            None => source.inputs(f)?,
            Some(_) => continue,
        };
        pairs.push((inputs[s.id.as_str()].clone(), f_inputs));
    }
    let pair_rate = match (setting, pairs.is_empty()) {
        (Setting::Pair, true) => return Err(EvalError::EmptyPairs),
        (_, true) => None,
        (_, false) => Some((pair_same_label_rate(model, &pairs)?, pairs.len())),
    };
    Ok(EvalReport::from_predictions(setting, predictions, pair_rate))
}

/// `predictions.jsonl` plus `summary.json` under `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(e.to_string());
    let mut lines = String::new();
    for p in &report.predictions {
        lines.push_str(&serde_json::to_string(p).expect("prediction serialises"));
        lines.push('\n');
    }
    write_atomic(&dir.join("predictions.jsonl"), lines.as_bytes()).map_err(io)?;
    let summary = serde_json::to_string_pretty(&report.summary()).expect("summary serialises");
    write_atomic(&dir.join("summary.json"), summary.as_bytes()).map_err(io)
}

/// Plain-text table with columns Accuracy, Precision, Recall, F1 (percent).
pub fn render_table(rows: &[(String, EvalReport)]) -> String {
    let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<w$}  {:>8}  {:>9}  {:>6}  {:>6}  {:>9}", "Model", "Accuracy", "Precision", "Recall", "F1", "PairSame");
    for (name, r) in rows {
        let pair = r.pair_same_label_rate.map_or("-".to_string(), |p| format!("{:.2}", 100.0 * p));
        let _ = writeln!(
            s,
            "{:<w$}  {:>8.2}  {:>9.2}  {:>6.2}  {:>6.2}  {:>9}",
            name,
            100.0 * r.accuracy,
            100.0 * r.precision,
            100.0 * r.recall,
            100.0 * r.f1,
            pair
        );
    }
    s
}

/// Loss-curve plot data: one CSV row per round.
pub fn loss_curve_csv(log: &TrainingLog) -> String {
    let mut s = String::from("epoch,loss_d,loss_c,objective,balance_gap,val_f1\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &log.records {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.loss_d, opt(r.loss_c), r.objective, opt(r.balance_gap), r.val_f1);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_worked_cases() {
        let m = metrics(&ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        let m = metrics(&ConfusionCounts { tp: 1, fp: 1, tn: 0, fn_: 1 });
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert!(!m.undefined.any());
    }

    #[test]
    fn zero_denominators_flagged() {
        let m = metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 0 });
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.undefined.precision && m.undefined.recall && m.undefined.f1);
        assert!(!m.undefined.accuracy);
        assert!(metrics(&ConfusionCounts::default()).undefined.accuracy);
    }

    #[test]
    fn counts_serialise_with_fn_key() {
        let j = serde_json::to_string(&ConfusionCounts { tp: 1, fp: 2, tn: 3, fn_: 4 }).unwrap();
        assert_eq!(j, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
    }

    #[test]
    fn table_columns() {
        let r = EvalReport::from_predictions(Setting::Original, vec![], None);
        let t = render_table(&[("full".into(), r)]);
        let header = t.lines().next().unwrap();
        let cols: Vec<_> = header.split_whitespace().collect();
        assert_eq!(cols, ["Model", "Accuracy", "Precision", "Recall", "F1", "PairSame"]);
    }
}

//! Train/valid/test partitioning under the five evaluation settings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Corpus, SetKind};
use crate::artifact;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Random split over unchanged and vulnerable code.
    Original,
    /// Same split as `Original`, applied to the identifier-substituted corpus.
    IdentSubst,
    /// Vulnerable/fixed pairs only, pairs kept in one partition.
    Pair,
    /// Pair split plus an original-style split of every remaining sample.
    PairCombine,
    /// Chronological split over unchanged and vulnerable code.
    Time,
}

impl Setting {
    pub const ALL: [Setting; 5] = [Setting::Original, Setting::IdentSubst, Setting::Pair, Setting::PairCombine, Setting::Time];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Original => "original",
            Setting::IdentSubst => "ident_subst",
            Setting::Pair => "pair",
            Setting::PairCombine => "pair_combine",
            Setting::Time => "time",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Setting::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown setting {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, valid: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), SplitError> {
        let ok = [self.train, self.valid, self.test].iter().all(|r| r.is_finite() && *r >= 0.0)
            && ((self.train + self.valid + self.test) - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(SplitError::InvalidRatios(*self))
        }
    }

    /// (train, valid, test) sizes for `n` units: valid and test floored, remainder to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let valid = floor(self.valid).min(n);
        let test = floor(self.test).min(n - valid);
        (n - valid - test, valid, test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Apply the ratios within each label separately (original-style settings only).
    pub stratify: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("split ratios must be nonnegative and sum to 1, got {0:?}")]
    InvalidRatios(SplitRatios),
    #[error("time split requires dates; missing on: {}", .0.join(", "))]
    MissingTimestamps(Vec<String>),
    #[error("pair split requested on a corpus without vulnerable/fixed pairs")]
    NoPairs,
    #[error("split io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub setting: Setting,
    pub ratios: SplitRatios,
    pub seed: u64,
    pub stratified: bool,
    pub train: BTreeSet<String>,
    pub valid: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitManifest {
    setting: Setting,
    ratios: SplitRatios,
    seed: u64,
    stratified: bool,
    train: usize,
    valid: usize,
    test: usize,
}

impl SplitAssignment {
    pub fn ids(&self, p: Partition) -> &BTreeSet<String> {
        match p {
            Partition::Train => &self.train,
            Partition::Valid => &self.valid,
            Partition::Test => &self.test,
        }
    }

    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        [Partition::Train, Partition::Valid, Partition::Test].into_iter().find(|p| self.ids(*p).contains(id))
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Write `train.txt`, `valid.txt`, `test.txt` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), SplitError> {
        let io = |e: std::io::Error| SplitError::Io(e.to_string());
        for (name, ids) in [("train.txt", &self.train), ("valid.txt", &self.valid), ("test.txt", &self.test)] {
            let mut text = String::new();
            for id in ids {
                text.push_str(id);
                text.push('\n');
            }
            artifact::write_atomic(&dir.join(name), text.as_bytes()).map_err(io)?;
        }
        let manifest = SplitManifest {
            setting: self.setting,
            ratios: self.ratios,
            seed: self.seed,
            stratified: self.stratified,
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        artifact::write_atomic(&dir.join("manifest.json"), json.as_bytes()).map_err(io)
    }

    pub fn load(dir: &Path) -> Result<Self, SplitError> {
        let io = |e: std::io::Error| SplitError::Io(e.to_string());
        let manifest: SplitManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).map_err(io)?)
                .map_err(|e| SplitError::Io(e.to_string()))?;
        let read = |name: &str| -> Result<BTreeSet<String>, SplitError> {
            Ok(std::fs::read_to_string(dir.join(name))
                .map_err(io)?
                .lines()
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect())
        };
        Ok(SplitAssignment {
            setting: manifest.setting,
            ratios: manifest.ratios,
            seed: manifest.seed,
            stratified: manifest.stratified,
            train: read("train.txt")?,
            valid: read("valid.txt")?,
            test: read("test.txt")?,
        })
    }
}

pub fn make_split(corpus: &Corpus, setting: Setting, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment, SplitError> {
    make_split_with(corpus, setting, ratios, seed, SplitOptions::default())
}

/// Partition the eligible samples of `corpus` for `setting`. Deterministic in `seed`.
pub fn make_split_with(
    corpus: &Corpus,
    setting: Setting,
    ratios: SplitRatios,
    seed: u64,
    options: SplitOptions,
) -> Result<SplitAssignment, SplitError> {
    ratios.validate()?;
    let mut out = SplitAssignment {
        setting,
        ratios,
        seed,
        stratified: options.stratify,
        train: BTreeSet::new(),
        valid: BTreeSet::new(),
        test: BTreeSet::new(),
    };
    match setting {
        Setting::Original | Setting::IdentSubst => {
            let units = detector_units(corpus);
            random_partition(units, ratios, seed, options.stratify, &mut out);
        }
        Setting::Pair => {
            let units = pair_units(corpus)?;
            random_partition(units, ratios, seed, false, &mut out);
        }
        Setting::PairCombine => {
            let units = pair_units(corpus)?;
            random_partition(units, ratios, seed, false, &mut out);
            let paired: BTreeSet<&str> = out.train.iter().chain(&out.valid).chain(&out.test).map(String::as_str).collect();
            let rest: Vec<Unit> = corpus
                .samples()
                .iter()
                .filter(|s| !paired.contains(s.id.as_str()))
                .map(|s| Unit { ids: vec![s.id.clone()], label: s.label.index() })
                .collect();
            let mut rest_split = out.clone();
            rest_split.train.clear();
            rest_split.valid.clear();
            rest_split.test.clear();
            random_partition(rest, ratios, artifact::stage_seed(seed, "pair_combine_rest"), options.stratify, &mut rest_split);
            out.train.extend(rest_split.train);
            out.valid.extend(rest_split.valid);
            out.test.extend(rest_split.test);
        }
        Setting::Time => {
            let eligible: Vec<_> = corpus
                .samples()
                .iter()
                .filter(|s| matches!(s.set_kind, SetKind::Unchanged | SetKind::Vulnerable))
                .collect();
            let missing: Vec<String> = eligible.iter().filter(|s| s.timestamp.is_none()).map(|s| s.id.clone()).collect();
            if !missing.is_empty() {
                return Err(SplitError::MissingTimestamps(missing));
            }
            let mut ordered: Vec<_> = eligible.iter().map(|s| (s.timestamp.expect("checked"), s.id.clone())).collect();
            ordered.sort();
            let (n_train, n_valid, _) = ratios.sizes(ordered.len());
            for (i, (_, id)) in ordered.into_iter().enumerate() {
                let set = if i < n_train {
                    &mut out.train
                } else if i < n_train + n_valid {
                    &mut out.valid
                } else {
                    &mut out.test
                };
                set.insert(id);
            }
        }
    }
    Ok(out)
}

/// Samples that go through a split together.
#[derive(Debug, Clone)]
struct Unit {
    ids: Vec<String>,
    label: usize,
}

fn detector_units(corpus: &Corpus) -> Vec<Unit> {
    corpus
        .samples()
        .iter()
        .filter(|s| matches!(s.set_kind, SetKind::Unchanged | SetKind::Vulnerable))
        .map(|s| Unit { ids: vec![s.id.clone()], label: s.label.index() })
        .collect()
}

fn pair_units(corpus: &Corpus) -> Result<Vec<Unit>, SplitError> {
    let units: Vec<Unit> =
        corpus.pairs().into_iter().map(|(v, f)| Unit { ids: vec![v.id.clone(), f.id.clone()], label: 1 }).collect();
    if units.is_empty() {
        return Err(SplitError::NoPairs);
    }
    Ok(units)
}

fn random_partition(mut units: Vec<Unit>, ratios: SplitRatios, seed: u64, stratify: bool, out: &mut SplitAssignment) {
    units.sort_by(|a, b| a.ids.cmp(&b.ids));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<Unit>> = if stratify {
        let mut by_label: BTreeMap<usize, Vec<Unit>> = BTreeMap::new();
        for u in units {
            by_label.entry(u.label).or_default().push(u);
        }
        by_label.into_values().collect()
    } else {
        vec![units]
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let (n_train, n_valid, _) = ratios.sizes(group.len());
        for (i, unit) in group.into_iter().enumerate() {
            let set = if i < n_train {
                &mut out.train
            } else if i < n_train + n_valid {
                &mut out.valid
            } else {
                &mut out.test
            };
            set.extend(unit.ids);
        }
    }
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::corpus::CodeSample;

    fn corpus(n_unchanged: usize, n_pairs: usize) -> Corpus {
        let mut s = Vec::new();
        for i in 0..n_unchanged {
            s.push(CodeSample::new(format!("u{i:03}"), "int f(){}", SetKind::Unchanged, None, NaiveDate::from_ymd_opt(2010, 1, 1 + (i % 28) as u32)));
        }
        for i in 0..n_pairs {
            let d = NaiveDate::from_ymd_opt(2012, 1 + (i % 12) as u32, 1);
            s.push(CodeSample::new(format!("v{i:03}"), "int f(){}", SetKind::Vulnerable, Some(format!("p{i}")), d));
            s.push(CodeSample::new(format!("f{i:03}"), "int f(){}", SetKind::Fixed, Some(format!("p{i}")), d));
        }
        Corpus::new(s, "t").unwrap()
    }

    #[test]
    fn original_80_10_10() {
        let c = corpus(90, 10);
        let s = make_split(&c, Setting::Original, SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
        assert!(s.ids(Partition::Train).iter().all(|id| !id.starts_with('f')));
    }

    #[test]
    fn sizes_floor_valid_and_test() {
        let r = SplitRatios::default();
        assert_eq!(r.sizes(19), (17, 1, 1));
        assert_eq!(r.sizes(9), (9, 0, 0));
        assert_eq!(SplitRatios { train: 0.42, valid: 0.29, test: 0.29 }.sizes(100), (42, 29, 29));
    }

    #[test]
    fn pair_split_keeps_pairs_together() {
        let c = corpus(5, 10);
        let s = make_split(&c, Setting::Pair, SplitRatios::default(), 3).unwrap();
        assert_eq!(s.len(), 20);
        for i in 0..10 {
            assert_eq!(s.partition_of(&format!("v{i:03}")), s.partition_of(&format!("f{i:03}")));
        }
    }

    #[test]
    fn pair_combine_contains_pair_split() {
        let c = corpus(50, 20);
        let p = make_split(&c, Setting::Pair, SplitRatios::default(), 9).unwrap();
        let pc = make_split(&c, Setting::PairCombine, SplitRatios::default(), 9).unwrap();
        assert_eq!(pc.len(), c.len());
        assert!(p.test.is_subset(&pc.test));
        assert!(p.train.is_subset(&pc.train));
    }

    #[test]
    fn pair_split_without_pairs_fails() {
        assert_eq!(make_split(&corpus(5, 0), Setting::Pair, SplitRatios::default(), 0), Err(SplitError::NoPairs));
    }

    #[test]
    fn time_split_requires_dates() {
        let c = Corpus::new(vec![CodeSample::new("a", "", SetKind::Unchanged, None, None)], "t").unwrap();
        assert_eq!(
            make_split(&c, Setting::Time, SplitRatios::default(), 0),
            Err(SplitError::MissingTimestamps(vec!["a".into()]))
        );
        // other settings ignore dates
        assert!(make_split(&c, Setting::Original, SplitRatios::default(), 0).is_ok());
    }

    #[test]
    fn bad_ratios_rejected() {
        let r = SplitRatios { train: 0.8, valid: 0.1, test: 0.2 };
        assert!(matches!(make_split(&corpus(3, 0), Setting::Original, r, 0), Err(SplitError::InvalidRatios(_))));
    }

    #[test]
    fn stratified_split_balances_labels() {
        let c = corpus(90, 10);
        let s = make_split_with(&c, Setting::Original, SplitRatios::default(), 5, SplitOptions { stratify: true }).unwrap();
        let vul_test = s.test.iter().filter(|id| id.starts_with('v')).count();
        assert_eq!(vul_test, 1);
        assert_eq!(s.test.len(), 10);
    }

    #[test]
    fn save_load_roundtrip() {
        let c = corpus(20, 5);
        let s = make_split(&c, Setting::PairCombine, SplitRatios::default(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        assert_eq!(SplitAssignment::load(dir.path()).unwrap(), s);
    }

    #[test]
    fn setting_parse() {
        for s in Setting::ALL {
            assert_eq!(s.as_str().parse::<Setting>().unwrap(), s);
        }
    }
}

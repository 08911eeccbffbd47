//! Experiment verbs over one experiment directory.
//!
//! Layout under the directory:
//!
//! ```text
//! corpus/corpus.jsonl            ingest
//! anonymized/corpus.jsonl        anonymize (+ mappings.jsonl)
//! paths/<variant>/paths.jsonl    extract-paths
//! splits/<setting>/              split
//! runs/<setting>/                train (model.ckpt, training_log.jsonl)
//! reports/<setting>/             evaluate (predictions.jsonl, summary.json)
//! sweep/b<batch>_l<lambda>/      sweep (one report per cell)
//! report/                        report (table.txt, loss curves)
//! ```
//!
//! Every artifact directory carries an `artifact.json` manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{sha256_file, write_atomic};
use crate::cfgpath::{extract_paths, path_records, PathRecord};
use crate::config::{ConfigError, ExperimentConfig};
use crate::corpus::{filter_by_token_limit, ingest_corpus, parse_corpus, Corpus, CorpusFormat, Setting, SplitAssignment};
use crate::eval::{loss_curve_csv, render_table, write_report, EvalReport};
use crate::pipeline::{evaluate_on, split_for, train_on, training_setting, PipelineError};
use crate::protogame::{load_checkpoint, save_checkpoint, Checkpoint, NoObserver, TrainingLog};
use crate::transform::build_identifier_setting;

pub const MANIFEST: &str = "artifact.json";
pub const SWEEP_BATCH: [usize; 4] = [4, 8, 16, 32];
pub const SWEEP_LAMBDA: [f64; 4] = [0.0, 0.001, 0.01, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Ingest,
    Anonymize,
    ExtractPaths,
    Split,
    Train,
    Evaluate,
    Sweep,
    Report,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Ingest => "ingest",
            Verb::Anonymize => "anonymize",
            Verb::ExtractPaths => "extract-paths",
            Verb::Split => "split",
            Verb::Train => "train",
            Verb::Evaluate => "evaluate",
            Verb::Sweep => "sweep",
            Verb::Report => "report",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing input artifact {path}: {hint}")]
    Missing { path: String, hint: String },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Provenance of one artifact directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub verb: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input path to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to sha256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Option<Manifest> {
        let text = fs::read_to_string(dir.join(MANIFEST)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// True when every listed output still has its recorded hash.
    pub fn outputs_intact(&self, dir: &Path) -> bool {
        self.outputs.iter().all(|(name, h)| sha256_file(&dir.join(name)).is_ok_and(|x| &x == h))
    }
}

/// Exclusive writer lock on an experiment directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock, CliError> {
        fs::create_dir_all(dir).map_err(runtime)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Runtime(format!(
                "{} is locked by another process; remove {} if that process is gone",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(runtime(e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// One verb invocation.
pub struct Invocation {
    pub verb: Verb,
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub force: bool,
}

/// Run a verb; returns a one-line summary for the terminal.
pub fn run(inv: &Invocation) -> Result<String, CliError> {
    inv.config.validate()?;
    let _lock = DirLock::acquire(&inv.dir)?;
    let ctx = Ctx { cfg: &inv.config, dir: &inv.dir, hash: inv.config.hash() };
    match inv.verb {
        Verb::Ingest => ctx.ingest(),
        Verb::Anonymize => ctx.anonymize(),
        Verb::ExtractPaths => ctx.extract_paths(),
        Verb::Split => ctx.split(),
        Verb::Train => ctx.train(inv.force),
        Verb::Evaluate => ctx.evaluate(),
        Verb::Sweep => ctx.sweep(),
        Verb::Report => ctx.report(),
    }
}

/// Run `ingest` through `report` for `cfg.setting`.
pub fn run_all(config: &ExperimentConfig, dir: &Path) -> Result<(), CliError> {
    use Verb::*;
    for verb in [Ingest, Anonymize, ExtractPaths, Split, Train, Evaluate, Report] {
        run(&Invocation { verb, config: config.clone(), dir: dir.to_path_buf(), force: false })?;
    }
    Ok(())
}

pub fn corpus_path(dir: &Path) -> PathBuf {
    dir.join("corpus").join("corpus.jsonl")
}

pub fn anonymized_path(dir: &Path) -> PathBuf {
    dir.join("anonymized").join("corpus.jsonl")
}

pub fn split_dir(dir: &Path, split_setting: Setting) -> PathBuf {
    dir.join("splits").join(split_setting.as_str())
}

pub fn run_dir(dir: &Path, setting: Setting) -> PathBuf {
    dir.join("runs").join(setting.as_str())
}

pub fn report_dir(dir: &Path, setting: Setting) -> PathBuf {
    dir.join("reports").join(setting.as_str())
}

pub fn sweep_cell(dir: &Path, batch: usize, lambda: f64) -> PathBuf {
    dir.join("sweep").join(format!("b{batch}_l{lambda}"))
}

/// The split a setting's split artifact is stored under.
fn stored_setting(setting: Setting) -> Setting {
    match setting {
        Setting::IdentSubst => Setting::Original,
        s => s,
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    hash: String,
}

impl Ctx<'_> {
    fn need(&self, path: &Path, hint: &str) -> Result<String, CliError> {
        sha256_file(path).map_err(|_| CliError::Missing { path: path.display().to_string(), hint: hint.to_string() })
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(self.dir).unwrap_or(path).display().to_string()
    }

    fn inputs(&self, items: &[(&Path, &str)]) -> Result<BTreeMap<String, String>, CliError> {
        items.iter().map(|(p, hint)| Ok((self.rel(p), self.need(p, hint)?))).collect()
    }

    /// Write the manifest last, hashing the listed outputs.
    fn seal(&self, out: &Path, verb: Verb, inputs: BTreeMap<String, String>, outputs: &[&str]) -> Result<(), CliError> {
        let outputs = outputs
            .iter()
            .map(|name| Ok((name.to_string(), sha256_file(&out.join(name)).map_err(runtime)?)))
            .collect::<Result<_, CliError>>()?;
        let m = Manifest { verb: verb.as_str().into(), config_hash: self.hash.clone(), seed: self.cfg.seed, inputs, outputs };
        write_atomic(&out.join(MANIFEST), serde_json::to_string_pretty(&m).expect("manifest serialises").as_bytes())
            .map_err(runtime)
    }

    fn load_corpus(&self, path: &Path, hint: &str) -> Result<Corpus, CliError> {
        self.need(path, hint)?;
        let text = fs::read_to_string(path).map_err(runtime)?;
        parse_corpus(&text, CorpusFormat::Jsonl, &path.display().to_string()).map_err(runtime)
    }

    fn ingested(&self) -> Result<Corpus, CliError> {
        self.load_corpus(&corpus_path(self.dir), "run `ingest` first")
    }

    /// Corpus the configured setting reads.
    fn setting_corpus_path(&self) -> (PathBuf, &'static str) {
        if self.cfg.setting == Setting::IdentSubst {
            (anonymized_path(self.dir), "run `anonymize` first")
        } else {
            (corpus_path(self.dir), "run `ingest` first")
        }
    }

    fn load_split(&self, split_setting: Setting) -> Result<(SplitAssignment, PathBuf), CliError> {
        let d = split_dir(self.dir, stored_setting(split_setting));
        self.need(&d.join("train.txt"), "run `split` first")?;
        Ok((SplitAssignment::load(&d).map_err(runtime)?, d))
    }

    fn ingest(&self) -> Result<String, CliError> {
        let src = &self.cfg.corpus;
        let input_hash = self.need(src, "the configured `corpus` file does not exist")?;
        let raw = ingest_corpus(src, self.cfg.corpus_format).map_err(runtime)?;
        let corpus = filter_by_token_limit(&raw, self.cfg.token_limit);
        let out = self.dir.join("corpus");
        write_atomic(&out.join("corpus.jsonl"), corpus.to_jsonl().as_bytes()).map_err(runtime)?;
        let inputs = BTreeMap::from([(src.display().to_string(), input_hash)]);
        self.seal(&out, Verb::Ingest, inputs, &["corpus.jsonl"])?;
        Ok(format!("ingested {} of {} samples into {}", corpus.len(), raw.len(), out.display()))
    }

    fn anonymize(&self) -> Result<String, CliError> {
        let input = corpus_path(self.dir);
        let corpus = self.ingested()?;
        let (renamed, maps) = build_identifier_setting(&corpus);
        let out = self.dir.join("anonymized");
        write_atomic(&out.join("corpus.jsonl"), renamed.to_jsonl().as_bytes()).map_err(runtime)?;
        let mut lines = String::new();
        for m in &maps {
            lines.push_str(&serde_json::to_string(m).expect("mapping serialises"));
            lines.push('\n');
        }
        write_atomic(&out.join("mappings.jsonl"), lines.as_bytes()).map_err(runtime)?;
        let skipped = maps.iter().filter(|m| m.untransformed).count();
        self.seal(&out, Verb::Anonymize, self.inputs(&[(&input, "run `ingest` first")])?, &["corpus.jsonl", "mappings.jsonl"])?;
        Ok(format!("anonymized {} samples ({skipped} left verbatim) into {}", renamed.len(), out.display()))
    }

    fn extract_paths(&self) -> Result<String, CliError> {
        let (input, hint) = self.setting_corpus_path();
        let corpus = self.load_corpus(&input, hint)?;
        let variant = if self.cfg.setting == Setting::IdentSubst { "anonymized" } else { "original" };
        let pc = self.cfg.path_config();
        let mut lines = String::new();
        let mut failed = 0;
        for s in corpus.samples() {
            let records: Vec<PathRecord> = match extract_paths(&s.source, &pc) {
                Ok((_, _, sel)) => path_records(&s.id, &sel.paths),
                Err(e) => {
                    log::warn!("{}: {e}", s.id);
                    failed += 1;
                    Vec::new()
                }
            };
            for r in records {
                lines.push_str(&serde_json::to_string(&r).expect("record serialises"));
                lines.push('\n');
            }
        }
        let out = self.dir.join("paths").join(variant);
        write_atomic(&out.join("paths.jsonl"), lines.as_bytes()).map_err(runtime)?;
        self.seal(&out, Verb::ExtractPaths, self.inputs(&[(&input, hint)])?, &["paths.jsonl"])?;
        Ok(format!("paths for {} samples ({failed} without a CFG) into {}", corpus.len(), out.display()))
    }

    fn split(&self) -> Result<String, CliError> {
        let input = corpus_path(self.dir);
        let corpus = self.ingested()?;
        let mut settings = vec![stored_setting(training_setting(self.cfg.setting))];
        if !settings.contains(&stored_setting(self.cfg.setting)) {
            settings.push(stored_setting(self.cfg.setting));
        }
        let mut msg = Vec::new();
        for s in settings {
            let split = split_for(&corpus, s, self.cfg).map_err(runtime)?;
            let out = split_dir(self.dir, s);
            split.save(&out).map_err(runtime)?;
            self.seal(&out, Verb::Split, self.inputs(&[(&input, "run `ingest` first")])?, &["train.txt", "valid.txt", "test.txt"])?;
            msg.push(format!("{s}: {}/{}/{}", split.train.len(), split.valid.len(), split.test.len()));
        }
        Ok(format!("split {}", msg.join(", ")))
    }

    fn train(&self, force: bool) -> Result<String, CliError> {
        let (input, hint) = self.setting_corpus_path();
        let (split, sdir) = self.load_split(training_setting(self.cfg.setting))?;
        let inputs = self.inputs(&[(&input, hint), (&sdir.join("train.txt"), "run `split` first"), (&sdir.join("valid.txt"), "run `split` first")])?;
        let out = run_dir(self.dir, self.cfg.setting);
        if !force {
            if let Some(m) = Manifest::load(&out) {
                if m.config_hash == self.hash && m.inputs == inputs && m.outputs_intact(&out) {
                    return Ok(format!("{} is up to date; pass --force to retrain", out.display()));
                }
            }
        }
        let corpus = self.load_corpus(&input, hint)?;
        let (model, log) = train_on(&corpus, &split, self.cfg, &mut NoObserver)?;
        let ckpt = Checkpoint {
            model,
            seed: self.cfg.seed,
            epoch: log.best_epoch,
            config: serde_json::to_value(self.cfg).expect("config serialises"),
        };
        save_checkpoint(&out.join("model.ckpt"), &ckpt).map_err(runtime)?;
        write_atomic(&out.join("training_log.jsonl"), log.to_jsonl().as_bytes()).map_err(runtime)?;
        self.seal(&out, Verb::Train, inputs, &["model.ckpt", "training_log.jsonl"])?;
        Ok(format!(
            "trained {} rounds ({:?}); best epoch {} with validation F1 {:.4}",
            log.records.len(),
            log.stop_reason,
            log.best_epoch,
            log.best_val_f1
        ))
    }

    fn evaluate(&self) -> Result<String, CliError> {
        let (input, hint) = self.setting_corpus_path();
        let (split, sdir) = self.load_split(self.cfg.setting)?;
        let rdir = run_dir(self.dir, self.cfg.setting);
        let ckpt_path = rdir.join("model.ckpt");
        let inputs = self.inputs(&[(&input, hint), (&sdir.join("test.txt"), "run `split` first"), (&ckpt_path, "run `train` first")])?;
        if Manifest::load(&rdir).is_some_and(|m| m.config_hash != self.hash) {
            return Err(CliError::Missing {
                path: ckpt_path.display().to_string(),
                hint: "the model was trained under a different config; run `train`".into(),
            });
        }
        let model = load_checkpoint(&ckpt_path).map_err(runtime)?.model;
        let corpus = self.load_corpus(&input, hint)?;
        let report = evaluate_on(&model, &corpus, &split, self.cfg)?;
        let out = report_dir(self.dir, self.cfg.setting);
        write_report(&out, &report).map_err(runtime)?;
        self.seal(&out, Verb::Evaluate, inputs, &["predictions.jsonl", "summary.json"])?;
        Ok(summary_line(&self.cfg.setting.to_string(), &report))
    }

    fn sweep(&self) -> Result<String, CliError> {
        let (input, hint) = self.setting_corpus_path();
        let (train_split, tdir) = self.load_split(training_setting(self.cfg.setting))?;
        let (eval_split, edir) = self.load_split(self.cfg.setting)?;
        let corpus = self.load_corpus(&input, hint)?;
        let mut n = 0;
        for batch in SWEEP_BATCH {
            for lambda in SWEEP_LAMBDA {
                let cell_cfg = ExperimentConfig { batch_size: batch, lambda, ..self.cfg.clone() };
                let cell = Ctx { cfg: &cell_cfg, dir: self.dir, hash: cell_cfg.hash() };
                let inputs = cell.inputs(&[(&input, hint), (&tdir.join("train.txt"), "run `split` first"), (&edir.join("test.txt"), "run `split` first")])?;
                let (model, log) = train_on(&corpus, &train_split, &cell_cfg, &mut NoObserver)?;
                let report = evaluate_on(&model, &corpus, &eval_split, &cell_cfg)?;
                let out = sweep_cell(self.dir, batch, lambda);
                write_report(&out, &report).map_err(runtime)?;
                write_atomic(&out.join("training_log.jsonl"), log.to_jsonl().as_bytes()).map_err(runtime)?;
                cell.seal(&out, Verb::Sweep, inputs, &["predictions.jsonl", "summary.json", "training_log.jsonl"])?;
                info!("{}", summary_line(&format!("batch {batch} lambda {lambda}"), &report));
                n += 1;
            }
        }
        Ok(format!("sweep wrote {n} reports under {}", self.dir.join("sweep").display()))
    }

    fn report(&self) -> Result<String, CliError> {
        let mut rows = Vec::new();
        let mut inputs = BTreeMap::new();
        let out = self.dir.join("report");
        let mut outputs = vec!["table.txt".to_string()];
        for setting in Setting::ALL {
            let p = report_dir(self.dir, setting).join("summary.json");
            if let Ok(h) = sha256_file(&p) {
                rows.push((setting.to_string(), read_summary(&p)?));
                inputs.insert(self.rel(&p), h);
            }
            let log_path = run_dir(self.dir, setting).join("training_log.jsonl");
            if let Ok(h) = sha256_file(&log_path) {
                let log = TrainingLog::from_jsonl(&fs::read_to_string(&log_path).map_err(runtime)?).map_err(runtime)?;
                let name = format!("loss_curve_{setting}.csv");
                write_atomic(&out.join(&name), loss_curve_csv(&log).as_bytes()).map_err(runtime)?;
                outputs.push(name);
                inputs.insert(self.rel(&log_path), h);
            }
        }
        for batch in SWEEP_BATCH {
            for lambda in SWEEP_LAMBDA {
                let p = sweep_cell(self.dir, batch, lambda).join("summary.json");
                if let Ok(h) = sha256_file(&p) {
                    rows.push((format!("sweep b={batch} l={lambda}"), read_summary(&p)?));
                    inputs.insert(self.rel(&p), h);
                }
            }
        }
        if rows.is_empty() {
            return Err(CliError::Missing {
                path: self.dir.join("reports").display().to_string(),
                hint: "no reports found; run `evaluate` or `sweep` first".into(),
            });
        }
        let table = render_table(&rows);
        write_atomic(&out.join("table.txt"), table.as_bytes()).map_err(runtime)?;
        let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
        self.seal(&out, Verb::Report, inputs, &names)?;
        Ok(table.trim_end().to_string())
    }
}

fn read_summary(path: &Path) -> Result<EvalReport, CliError> {
    serde_json::from_str(&fs::read_to_string(path).map_err(runtime)?).map_err(runtime)
}

fn summary_line(name: &str, r: &EvalReport) -> String {
    let pair = r.pair_same_label_rate.map_or("-".into(), |p| format!("{p:.4} over {} pairs", r.n_pairs));
    format!("{name}: acc {:.4} prec {:.4} rec {:.4} f1 {:.4} pair-same {pair}", r.accuracy, r.precision, r.recall, r.f1)
}

/// Config file for `path`, loaded or failing with the config exit code.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    if !path.exists() {
        return Err(CliError::Missing { path: path.display().to_string(), hint: "config file not found".into() });
    }
    Ok(ExperimentConfig::load(path)?)
}

/// Write a corpus file, creating parent directories.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), CliError> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(runtime)?;
    }
    let mut f = File::create(path).map_err(runtime)?;
    f.write_all(corpus.to_jsonl().as_bytes()).map_err(runtime)
}

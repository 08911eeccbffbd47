//! Flat experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::sha256_hex;
use crate::cfgpath::{PathConfig, SelectionPolicy};
use crate::corpus::{CorpusFormat, Setting, SplitRatios};
use crate::encoder::ConvConfig;
use crate::nn::OptimizerKind;
use crate::protogame::{CalibratorBatching, LossConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("invalid config keys:\n{}", .0.iter().map(|k| format!("  {k}")).collect::<Vec<_>>().join("\n"))]
    Keys(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Toy,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub corpus_format: CorpusFormat,
    pub setting: Setting,
    pub seed: u64,
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    pub stratify: bool,
    /// Samples above this many tokens are dropped before splitting.
    pub token_limit: usize,

    pub max_paths: usize,
    pub unroll_bound: usize,
    pub max_path_nodes: usize,
    pub enumeration_limit: usize,
    pub selection_policy: SelectionPolicy,

    pub encoder: EncoderKind,
    pub embed_dim: usize,
    pub hash_buckets: usize,
    pub reference_name: String,
    pub cache_dir: PathBuf,

    pub conv_out_channels: usize,
    pub conv_kernel_sizes: Vec<usize>,

    pub gamma: f64,
    pub lambda: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub game_off: bool,
    pub prototype_off: bool,
    pub freeze_trunk_in_calibrator: bool,
    pub separate_trunks: bool,
    pub calibrator_batching: CalibratorBatching,
    pub bg_warn_threshold: f64,
    pub threshold: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let p = PathConfig::default();
        let c = ConvConfig::default();
        ExperimentConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            corpus_format: CorpusFormat::Jsonl,
            setting: Setting::Original,
            seed: 0,
            train_ratio: 0.8,
            valid_ratio: 0.1,
            test_ratio: 0.1,
            stratify: false,
            token_limit: 512,
            max_paths: p.max_paths,
            unroll_bound: p.unroll_bound,
            max_path_nodes: p.max_path_nodes,
            enumeration_limit: p.enumeration_limit,
            selection_policy: p.selection_policy,
            encoder: EncoderKind::Toy,
            embed_dim: c.dim,
            hash_buckets: 1024,
            reference_name: "codebert-base".into(),
            cache_dir: PathBuf::from(".cache/embeddings"),
            conv_out_channels: c.out_channels,
            conv_kernel_sizes: c.kernel_sizes,
            gamma: t.loss.gamma,
            lambda: t.loss.lambda,
            optimizer: t.optimizer,
            learning_rate: t.lr,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            game_off: false,
            prototype_off: false,
            freeze_trunk_in_calibrator: false,
            separate_trunks: false,
            calibrator_batching: t.calibrator_batching,
            bg_warn_threshold: t.bg_warn_threshold,
            threshold: None,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "corpus", "corpus_format", "setting", "seed", "train_ratio", "valid_ratio", "test_ratio", "stratify", "token_limit",
    "max_paths", "unroll_bound", "max_path_nodes", "enumeration_limit", "selection_policy", "encoder", "embed_dim",
    "hash_buckets", "reference_name", "cache_dir", "conv_out_channels", "conv_kernel_sizes", "gamma", "lambda",
    "optimizer", "learning_rate", "batch_size", "max_epochs", "patience", "game_off", "prototype_off",
    "freeze_trunk_in_calibrator", "separate_trunks", "calibrator_batching", "bg_warn_threshold", "threshold",
];

impl ExperimentConfig {
    /// Parse and validate; every unknown, mistyped or out-of-range key is reported.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
        let mut problems: Vec<String> = table
            .keys()
            .filter(|k| !KNOWN_KEYS.contains(&k.as_str()))
            .map(|k| format!("{k}: unknown key"))
            .collect();
        // type-check keys one at a time so every bad value is listed
        let mut good = toml::Table::new();
        for (k, v) in &table {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                continue;
            }
            let mut one = toml::Table::new();
            one.insert(k.clone(), v.clone());
            match ExperimentConfig::deserialize(toml::Value::Table(one)) {
                Ok(_) => {
                    good.insert(k.clone(), v.clone());
                }
                Err(e) => problems.push(format!("{k}: {}", e.message())),
            }
        }
        let cfg = ExperimentConfig::deserialize(toml::Value::Table(good)).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Keys(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths are relative to the config file
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.corpus, &mut cfg.cache_dir] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hash of the canonical serialisation.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }

    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                p.push(msg.to_string());
            }
        };
        let r = self.ratios();
        need(r.validate().is_ok(), "train_ratio/valid_ratio/test_ratio: must be nonnegative and sum to 1");
        need(self.token_limit > 0, "token_limit: must be positive");
        need(self.max_paths >= 1, "max_paths: must be at least 1");
        need(self.max_path_nodes >= 1, "max_path_nodes: must be positive");
        need(self.enumeration_limit >= 1, "enumeration_limit: must be positive");
        need(self.embed_dim >= 1, "embed_dim: must be positive");
        need(self.hash_buckets >= 1, "hash_buckets: must be positive");
        need(self.conv_out_channels >= 1, "conv_out_channels: must be positive");
        need(
            !self.conv_kernel_sizes.is_empty()
                && self.conv_kernel_sizes.iter().all(|&k| k >= 1 && k <= self.max_paths * self.embed_dim),
            "conv_kernel_sizes: each size must lie in 1..=max_paths*embed_dim",
        );
        need(self.gamma > 0.0 && self.gamma.is_finite(), "gamma: must be positive");
        need(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda: must be nonnegative");
        need(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), "learning_rate: must be nonnegative");
        need(self.batch_size >= 1, "batch_size: must be positive");
        need(self.max_epochs >= 1, "max_epochs: must be positive");
        need(self.patience >= 1, "patience: must be positive");
        need(self.threshold.is_none_or(|t| (0.0..=1.0).contains(&t)), "threshold: must lie in [0, 1]");
        p
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Keys(p))
        }
    }

    pub fn ratios(&self) -> SplitRatios {
        SplitRatios { train: self.train_ratio, valid: self.valid_ratio, test: self.test_ratio }
    }

    pub fn path_config(&self) -> PathConfig {
        PathConfig {
            max_paths: self.max_paths,
            unroll_bound: self.unroll_bound,
            max_path_nodes: self.max_path_nodes,
            selection_policy: self.selection_policy,
            enumeration_limit: self.enumeration_limit,
        }
    }

    pub fn conv_config(&self) -> ConvConfig {
        ConvConfig {
            in_channels: 1,
            out_channels: self.conv_out_channels,
            kernel_sizes: self.conv_kernel_sizes.clone(),
            dim: self.embed_dim,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: LossConfig { gamma: self.gamma, lambda: self.lambda, prototype_off: self.prototype_off },
            optimizer: self.optimizer,
            lr: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            game_off: self.game_off,
            freeze_trunk_in_calibrator: self.freeze_trunk_in_calibrator,
            separate_trunks: self.separate_trunks,
            calibrator_batching: self.calibrator_batching,
            bg_warn_threshold: self.bg_warn_threshold,
            seed: self.seed,
            threshold: self.threshold,
            hidden: None,
        }
    }
}

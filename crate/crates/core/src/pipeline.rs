//! Glue from a corpus and a config to trained models and reports.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::artifact::stage_seed;
use crate::cfgpath::{extract_paths, PathConfig};
use crate::config::{EncoderKind, ExperimentConfig};
use crate::corpus::{
    filter_by_token_limit, make_split_with, CodeSample, Corpus, Partition, SetKind, Setting, SplitAssignment, SplitError,
    SplitOptions,
};
use crate::encoder::{ConvFusion, EmbeddingCache, EncodeError, PathEncoder, PathInput, ReferenceEncoder, ToyEncoder};
use crate::eval::{evaluate_setting, EvalError, EvalReport, SampleSource};
use crate::protogame::{train, Example, GameData, Model, NoObserver, Observer, ProtoError, TrainingLog, Trunk};
use crate::transform::build_identifier_setting;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Train(#[from] ProtoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Turns samples into the per-path inputs the trunk consumes.
pub struct Featurizer {
    pub encoder: Box<dyn PathEncoder>,
    pub paths: PathConfig,
}

impl Featurizer {
    pub fn new(encoder: Box<dyn PathEncoder>, paths: PathConfig) -> Self {
        Featurizer { encoder, paths }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let encoder: Box<dyn PathEncoder> = match cfg.encoder {
            EncoderKind::Toy => Box::new(toy_encoder(cfg)),
            EncoderKind::Reference => Box::new(ReferenceEncoder::new(
                cfg.reference_name.clone(),
                cfg.embed_dim,
                EmbeddingCache::from_env_or(cfg.cache_dir.clone()),
            )),
        };
        Featurizer::new(encoder, cfg.path_config())
    }

    /// Exactly `max_paths` rendered path texts, clipped to the encoder's token limit.
    ///
    /// A function the CFG builder rejects is read as one straight-line path.
    pub fn rendered_paths(&self, sample: &CodeSample) -> Vec<String> {
        let texts: Vec<String> = match extract_paths(&sample.source, &self.paths) {
            Ok((_, _, sel)) => sel.paths.into_iter().map(|p| p.rendered_text).collect(),
            Err(e) => {
                warn!("{}: {e}; using the whole function as a single path", sample.id);
                vec![sample.source.split_whitespace().collect::<Vec<_>>().join(" "); self.paths.max_paths]
            }
        };
        let limit = self.encoder.max_tokens();
        texts
            .into_iter()
            .map(|t| {
                let toks: Vec<&str> = t.split_whitespace().collect();
                if toks.len() > limit {
                    toks[..limit].join(" ")
                } else {
                    t
                }
            })
            .collect()
    }

    pub fn inputs(&self, sample: &CodeSample) -> Result<Vec<PathInput>, EncodeError> {
        self.rendered_paths(sample)
            .iter()
            .enumerate()
            .map(|(i, t)| self.encoder.input(t).map_err(|e| e.in_path(&sample.id, i)))
            .collect()
    }

    pub fn example(&self, sample: &CodeSample) -> Result<Example, EncodeError> {
        Ok(Example {
            id: sample.id.clone(),
            kind: sample.set_kind,
            label: sample.label,
            pair_id: sample.pair_id.clone(),
            inputs: self.inputs(sample)?,
        })
    }
}

impl SampleSource for Featurizer {
    fn inputs(&self, sample: &CodeSample) -> Result<Vec<PathInput>, EvalError> {
        Featurizer::inputs(self, sample).map_err(|e| EvalError::Model(e.into()))
    }
}

pub fn toy_encoder(cfg: &ExperimentConfig) -> ToyEncoder {
    ToyEncoder::new(cfg.embed_dim, cfg.hash_buckets, stage_seed(cfg.seed, "encoder"))
}

/// Trunk matching the configured encoder, with its own seeded initialisation.
pub fn build_trunk(cfg: &ExperimentConfig) -> Result<Trunk, PipelineError> {
    let fusion = ConvFusion::new(cfg.conv_config(), cfg.max_paths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, "trunk"));
    Ok(match cfg.encoder {
        EncoderKind::Toy => Trunk::for_toy(&toy_encoder(cfg), fusion, &mut rng)?,
        EncoderKind::Reference => Trunk::for_dense(fusion, &mut rng),
    })
}

/// Split setting the model is trained under. A PAIR model is trained on the
/// combined split so the detector sees unchanged code; it is scored on PAIR.
pub fn training_setting(setting: Setting) -> Setting {
    match setting {
        Setting::Pair => Setting::PairCombine,
        s => s,
    }
}

/// The corpus a setting reads: identifier-substituted for IDENT_SUBST.
pub fn setting_corpus(corpus: &Corpus, setting: Setting) -> Corpus {
    match setting {
        Setting::IdentSubst => build_identifier_setting(corpus).0,
        _ => corpus.clone(),
    }
}

/// Split for `setting`. IDENT_SUBST reuses the ORIGINAL partition.
pub fn split_for(corpus: &Corpus, setting: Setting, cfg: &ExperimentConfig) -> Result<SplitAssignment, SplitError> {
    let s = match setting {
        Setting::IdentSubst => Setting::Original,
        s => s,
    };
    make_split_with(corpus, s, cfg.ratios(), cfg.seed, SplitOptions { stratify: cfg.stratify })
}

/// Detector view: training U and V. Calibrator view: training V plus each
/// one's fix when the fix is in training or outside every partition.
/// Validation: non-fixed samples of the validation partition.
pub fn build_game_data(corpus: &Corpus, split: &SplitAssignment, featurizer: &Featurizer) -> Result<GameData, PipelineError> {
    let mut data = GameData::default();
    let get = |id: &str| corpus.get(id).ok_or_else(|| EvalError::MissingSample(id.to_string()));
    for id in &split.train {
        let s = get(id)?;
        match s.set_kind {
            SetKind::Unchanged => data.detector.push(featurizer.example(s)?),
            SetKind::Vulnerable => {
                let ex = featurizer.example(s)?;
                data.detector.push(ex.clone());
                data.calibrator.push(ex);
                if let Some(f) = corpus.partner(s) {
                    if matches!(split.partition_of(&f.id), None | Some(Partition::Train)) {
                        data.calibrator.push(featurizer.example(f)?);
                    }
                }
            }
            // fixes reach the calibrator through their vulnerable partner
            SetKind::Fixed => {}
        }
    }
    for id in &split.valid {
        let s = get(id)?;
        if s.set_kind != SetKind::Fixed {
            data.valid.push(featurizer.example(s)?);
        }
    }
    Ok(data)
}

/// Everything one setting run produces.
#[derive(Debug, Clone)]
pub struct SettingRun {
    pub model: Model,
    pub log: TrainingLog,
    pub report: EvalReport,
    pub train_split: SplitAssignment,
    pub eval_split: SplitAssignment,
}

/// Build the game views from `split` and train.
pub fn train_on(
    corpus: &Corpus,
    split: &SplitAssignment,
    cfg: &ExperimentConfig,
    obs: &mut dyn Observer,
) -> Result<(Model, TrainingLog), PipelineError> {
    let featurizer = Featurizer::from_config(cfg);
    let data = build_game_data(corpus, split, &featurizer)?;
    Ok(train(&data, build_trunk(cfg)?, &cfg.train_config(), obs)?)
}

pub fn evaluate_on(model: &Model, corpus: &Corpus, split: &SplitAssignment, cfg: &ExperimentConfig) -> Result<EvalReport, PipelineError> {
    Ok(evaluate_setting(model, cfg.setting, corpus, split, &Featurizer::from_config(cfg))?)
}

/// Train under `cfg.setting` and evaluate on its test partition.
pub fn run_setting(corpus: &Corpus, cfg: &ExperimentConfig, obs: &mut dyn Observer) -> Result<SettingRun, PipelineError> {
    let corpus = filter_by_token_limit(corpus, cfg.token_limit);
    let data_corpus = setting_corpus(&corpus, cfg.setting);
    let train_split = split_for(&corpus, training_setting(cfg.setting), cfg)?;
    let eval_split = if training_setting(cfg.setting) == cfg.setting {
        train_split.clone()
    } else {
        split_for(&corpus, cfg.setting, cfg)?
    };
    let (model, log) = train_on(&data_corpus, &train_split, cfg, obs)?;
    let report = evaluate_on(&model, &data_corpus, &eval_split, cfg)?;
    Ok(SettingRun { model, log, report, train_split, eval_split })
}

/// [`run_setting`] without instrumentation.
pub fn run(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<SettingRun, PipelineError> {
    run_setting(corpus, cfg, &mut NoObserver)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn small() -> (Corpus, ExperimentConfig) {
        let corpus = generate(&SynthConfig { n_pairs: 20, n_unchanged: 30, ..Default::default() });
        let cfg = ExperimentConfig { embed_dim: 8, hash_buckets: 64, max_epochs: 2, seed: 7, ..Default::default() };
        (corpus, cfg)
    }

    #[test]
    fn game_data_views() {
        let (corpus, cfg) = small();
        let split = split_for(&corpus, Setting::Original, &cfg).unwrap();
        let data = build_game_data(&corpus, &split, &Featurizer::from_config(&cfg)).unwrap();
        data.validate(false).unwrap();
        let n_v = data.detector.iter().filter(|e| e.kind == SetKind::Vulnerable).count();
        assert_eq!(data.calibrator.len(), 2 * n_v);
        assert!(data.detector.iter().all(|e| split.train.contains(&e.id)));
        assert!(data.calibrator.iter().all(|e| e.inputs.len() == cfg.max_paths));
    }

    #[test]
    fn unparsable_function_falls_back_to_one_path() {
        let (_, cfg) = small();
        let f = Featurizer::from_config(&cfg);
        let s = CodeSample::new("x", "int f( { return", SetKind::Unchanged, None, None);
        let paths = f.rendered_paths(&s);
        assert_eq!(paths.len(), 3);
        assert_eq!(paths[0], "int f( { return");
    }

    #[test]
    fn pair_setting_trains_on_combined_split() {
        let (corpus, cfg) = small();
        let cfg = ExperimentConfig { setting: Setting::Pair, ..cfg };
        let run = run(&corpus, &cfg).unwrap();
        assert_eq!(run.train_split.setting, Setting::PairCombine);
        assert_eq!(run.eval_split.setting, Setting::Pair);
        assert!(run.report.pair_same_label_rate.is_some());
    }
}

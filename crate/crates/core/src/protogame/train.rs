use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::stage_seed;
use crate::corpus::{Label, SetKind};
use crate::encoder::PathInput;
use crate::eval::{metrics, ConfusionCounts};
use crate::nn::{checksum, Mlp, Optimizer, OptimizerKind};

use super::{total_loss, total_loss_grad, LossConfig, Model, PrototypeBank, ProtoError, Role, Trunk};

/// A sample ready for the trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub kind: SetKind,
    pub label: Label,
    pub pair_id: Option<String>,
    pub inputs: Vec<PathInput>,
}

/// Training views: detector over unchanged + vulnerable, calibrator over
/// vulnerable + fixed, and the detector's validation set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GameData {
    pub detector: Vec<Example>,
    pub calibrator: Vec<Example>,
    pub valid: Vec<Example>,
}

fn allowed(role: Role, kind: SetKind) -> bool {
    match role {
        Role::Detector => kind != SetKind::Fixed,
        Role::Calibrator => kind != SetKind::Unchanged,
    }
}

impl GameData {
    pub fn validate(&self, game_off: bool) -> Result<(), ProtoError> {
        if self.detector.is_empty() {
            return Err(ProtoError::EmptyView("detector"));
        }
        if !self.detector.iter().any(|e| e.kind == SetKind::Vulnerable) {
            return Err(ProtoError::NoVulnerable);
        }
        let views: &[(Role, &[Example])] =
            &[(Role::Detector, &self.detector), (Role::Calibrator, &self.calibrator), (Role::Detector, &self.valid)];
        for (role, view) in views {
            if let Some(e) = view.iter().find(|e| !allowed(*role, e.kind)) {
                return Err(ProtoError::DataView { id: e.id.clone(), kind: e.kind.to_string(), role: *role });
            }
        }
        if !game_off && self.calibrator.is_empty() {
            return Err(ProtoError::EmptyView("calibrator"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibratorBatching {
    /// Each vulnerable sample travels with its fix.
    #[default]
    PairAligned,
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Single player on the detector view only.
    pub game_off: bool,
    pub freeze_trunk_in_calibrator: bool,
    pub separate_trunks: bool,
    pub calibrator_batching: CalibratorBatching,
    /// Warn when `|BG|` exceeds this.
    pub bg_warn_threshold: f64,
    pub seed: u64,
    pub threshold: Option<f64>,
    /// Head hidden width; defaults to the feature dimension.
    pub hidden: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            optimizer: OptimizerKind::Sgd,
            lr: 2e-5,
            batch_size: 16,
            max_epochs: 24,
            patience: 5,
            game_off: false,
            freeze_trunk_in_calibrator: false,
            separate_trunks: false,
            calibrator_batching: CalibratorBatching::PairAligned,
            bg_warn_threshold: 10.0,
            seed: 0,
            threshold: None,
            hidden: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProtoError> {
        self.loss.validate()?;
        let bad = |m: String| Err(ProtoError::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be nonnegative, got {}", self.lr));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive".into());
        }
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("threshold must lie in [0, 1], got {t}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_c: Option<f64>,
    pub objective: f64,
    pub balance_gap: Option<f64>,
    pub val_f1: f64,
    #[serde(default)]
    pub bg_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

impl TrainingLog {
    /// One line per round, then a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serialises"));
            s.push('\n');
        }
        let summary = serde_json::json!({
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
            "best_val_f1": self.best_val_f1,
        });
        s.push_str(&summary.to_string());
        s.push('\n');
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        struct Summary {
            stop_reason: StopReason,
            best_epoch: usize,
            best_val_f1: f64,
        }
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let (last, rest) = lines.split_last().map_or(("", &[][..]), |(l, r)| (*l, r));
        let summary: Summary = serde_json::from_str(last)?;
        let records = rest.iter().map(|l| serde_json::from_str(l)).collect::<Result<_, _>>()?;
        Ok(TrainingLog { records, stop_reason: summary.stop_reason, best_epoch: summary.best_epoch, best_val_f1: summary.best_val_f1 })
    }
}

/// Fingerprints of every parameter group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamChecksums {
    pub trunk: String,
    pub trunk_c: Option<String>,
    pub head_d: String,
    pub head_c: String,
    pub bank: String,
    /// Address of the bank both players read; equal across calls means one instance.
    pub bank_addr: usize,
}

/// Instrumentation hooks; every method defaults to a no-op.
pub trait Observer {
    fn wants_checksums(&self) -> bool {
        false
    }
    fn batch(&mut self, _role: Role, _batch: &[&Example], _bank_addr: usize) {}
    fn epoch(&mut self, _role: Role, _before: &ParamChecksums, _after: &ParamChecksums) {}
    fn round(&mut self, _record: &EpochRecord, _state: &mut GameState) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

pub struct GameState {
    pub model: Model,
    pub config: TrainConfig,
    opt_trunk: Optimizer,
    opt_trunk_c: Option<Optimizer>,
    opt_head_d: Optimizer,
    opt_head_c: Optimizer,
    opt_bank: Optimizer,
    rng: ChaCha8Rng,
}

impl GameState {
    pub fn new(model: Model, config: TrainConfig) -> Self {
        let opt = |n: usize| Optimizer::new(config.optimizer, config.lr, n);
        GameState {
            opt_trunk: opt(model.trunk.params.len()),
            opt_trunk_c: model.trunk_c.as_ref().map(|t| opt(t.params.len())),
            opt_head_d: opt(model.head_d.params.len()),
            opt_head_c: opt(model.head_c.params.len()),
            opt_bank: opt(model.bank.m.len()),
            rng: ChaCha8Rng::seed_from_u64(stage_seed(config.seed, "batches")),
            model,
            config,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
        for o in [&mut self.opt_trunk, &mut self.opt_head_d, &mut self.opt_head_c, &mut self.opt_bank] {
            o.lr = lr;
        }
        if let Some(o) = self.opt_trunk_c.as_mut() {
            o.lr = lr;
        }
    }

    pub fn checksums(&self) -> ParamChecksums {
        let m = &self.model;
        ParamChecksums {
            trunk: checksum(&m.trunk.params),
            trunk_c: m.trunk_c.as_ref().map(|t| checksum(&t.params)),
            head_d: checksum(&m.head_d.params),
            head_c: checksum(&m.head_c.params),
            bank: checksum(&m.bank.m),
            bank_addr: &m.bank as *const PrototypeBank as usize,
        }
    }
}

/// `R(e) - R(e-1)`.
pub fn compute_balance_gap(prev_objective: f64, curr_objective: f64) -> f64 {
    curr_objective - prev_objective
}

/// Heads from the seed; prototypes at the per-class mean feature of the
/// detector view, or random unit vectors when a class is missing.
pub fn init_model(trunk: Trunk, config: &TrainConfig, data: &GameData) -> Result<Model, ProtoError> {
    let dim = trunk.output_dim();
    let hidden = config.hidden.unwrap_or(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, "heads"));
    let head_d = Mlp::init(dim, hidden, 2, &mut rng);
    let head_c = Mlp::init(dim, hidden, 2, &mut rng);

    let mut sums = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];
    for ex in &data.detector {
        let (s, _) = trunk.forward(&ex.inputs)?;
        let l = ex.label.index();
        counts[l] += 1;
        for (a, v) in sums[l].iter_mut().zip(&s) {
            *a += v;
        }
    }
    let means: Vec<Vec<f64>> =
        sums.iter().zip(counts).map(|(s, c)| s.iter().map(|v| v / c.max(1) as f64).collect()).collect();
    let bank = if counts.iter().all(|&c| c > 0) && means[0] != means[1] {
        PrototypeBank::new(means[0].clone(), means[1].clone())?
    } else {
        log::warn!("prototype warm-up degenerate; using random unit prototypes");
        let mut unit = || {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let (a, b) = (unit(), unit());
        PrototypeBank::new(a, b)?
    };
    let trunk_c = config.separate_trunks.then(|| trunk.clone());
    Ok(Model { trunk, trunk_c, head_d, head_c, bank, loss: config.loss, threshold: config.threshold })
}

/// Mean total loss of one player over a view, without updating anything.
pub fn mean_loss(model: &Model, role: Role, examples: &[Example]) -> Result<f64, ProtoError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for ex in examples {
        let s = model.feature(role, &ex.inputs)?;
        sum += total_loss(&s, ex.label, model.head(role), &model.bank, &model.loss)?;
    }
    Ok(sum / examples.len() as f64)
}

fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Shuffle pair units (vulnerable + its fix when both are present), then pack
/// whole units into batches of at most `batch` samples where possible.
fn pair_batches(examples: &[Example], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut units: Vec<Vec<usize>> = Vec::new();
    let mut placed = vec![false; examples.len()];
    for (i, e) in examples.iter().enumerate() {
        if placed[i] {
            continue;
        }
        placed[i] = true;
        let mut unit = vec![i];
        if let Some(pid) = &e.pair_id {
            if let Some(j) = (i + 1..examples.len()).find(|&j| !placed[j] && examples[j].pair_id.as_ref() == Some(pid)) {
                placed[j] = true;
                unit.push(j);
            }
        }
        units.push(unit);
    }
    units.shuffle(rng);
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    for u in units {
        if !cur.is_empty() && cur.len() + u.len() > batch {
            out.push(std::mem::take(&mut cur));
        }
        cur.extend(u);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn run_epoch(
    state: &mut GameState,
    role: Role,
    examples: &[Example],
    batches: Vec<Vec<usize>>,
    obs: &mut dyn Observer,
) -> Result<f64, ProtoError> {
    if examples.is_empty() {
        return Err(ProtoError::EmptyView(if role == Role::Detector { "detector" } else { "calibrator" }));
    }
    let before = obs.wants_checksums().then(|| state.checksums());
    let prototype_off = state.model.loss.prototype_off;
    let train_trunk = !(role == Role::Calibrator && state.config.freeze_trunk_in_calibrator);
    let mut total = 0.0;
    for batch in batches {
        let refs: Vec<&Example> = batch.iter().map(|&i| &examples[i]).collect();
        obs.batch(role, &refs, &state.model.bank as *const PrototypeBank as usize);
        if let Some(e) = refs.iter().find(|e| !allowed(role, e.kind)) {
            return Err(ProtoError::DataView { id: e.id.clone(), kind: e.kind.to_string(), role });
        }

        let model = &state.model;
        let trunk = model.trunk_for(role);
        let head = model.head(role);
        let mut g_trunk = vec![0.0; trunk.params.len()];
        let mut g_head = vec![0.0; head.params.len()];
        let mut g_bank = vec![0.0; model.bank.m.len()];
        for ex in &refs {
            let (s, trace) = trunk.forward(&ex.inputs)?;
            let lg = total_loss_grad(&s, ex.label, head, &model.bank, &model.loss)?;
            let l = lg.total();
            if !l.is_finite() || lg.d_feature.iter().any(|g| !g.is_finite()) {
                return Err(ProtoError::NonFinite(format!("{role} epoch, sample {}: loss {l}", ex.id)));
            }
            total += l;
            for (a, g) in g_head.iter_mut().zip(&lg.d_head) {
                *a += g;
            }
            for (a, g) in g_bank.iter_mut().zip(&lg.d_bank) {
                *a += g;
            }
            if train_trunk {
                trunk.backward(&ex.inputs, &trace, &lg.d_feature, &mut g_trunk);
            }
        }
        let scale = 1.0 / refs.len() as f64;
        for g in g_trunk.iter_mut().chain(&mut g_head).chain(&mut g_bank) {
            *g *= scale;
        }

        let m = &mut state.model;
        match role {
            Role::Detector => state.opt_head_d.step(&mut m.head_d.params, &g_head),
            Role::Calibrator => state.opt_head_c.step(&mut m.head_c.params, &g_head),
        }
        if train_trunk {
            match (role, m.trunk_c.as_mut(), state.opt_trunk_c.as_mut()) {
                (Role::Calibrator, Some(t), Some(o)) => o.step(&mut t.params, &g_trunk),
                _ => state.opt_trunk.step(&mut m.trunk.params, &g_trunk),
            }
        }
        if !prototype_off {
            state.opt_bank.step(&mut m.bank.m, &g_bank);
        }
    }
    if let Some(before) = before {
        let after = state.checksums();
        obs.epoch(role, &before, &after);
    }
    Ok(total / examples.len() as f64)
}

/// One pass of the detector over its view; the calibrator head is not touched.
/// Returns the mean training loss.
pub fn train_epoch_detector(state: &mut GameState, examples: &[Example], obs: &mut dyn Observer) -> Result<f64, ProtoError> {
    let batches = shuffled_batches(examples.len(), state.config.batch_size, &mut state.rng);
    run_epoch(state, Role::Detector, examples, batches, obs)
}

/// One pass of the calibrator over its view; the detector head is not touched.
pub fn train_epoch_calibrator(state: &mut GameState, examples: &[Example], obs: &mut dyn Observer) -> Result<f64, ProtoError> {
    let batches = match state.config.calibrator_batching {
        CalibratorBatching::PairAligned => pair_batches(examples, state.config.batch_size, &mut state.rng),
        CalibratorBatching::Shuffled => shuffled_batches(examples.len(), state.config.batch_size, &mut state.rng),
    };
    run_epoch(state, Role::Calibrator, examples, batches, obs)
}

fn validation_f1(model: &Model, valid: &[Example]) -> Result<f64, ProtoError> {
    let mut c = ConfusionCounts::default();
    for ex in valid {
        c.add(ex.label, model.predict_inputs(&ex.inputs)?.label);
    }
    Ok(metrics(&c).f1)
}

/// Alternate detector and calibrator epochs until the round limit or until
/// validation F1 has not strictly improved for `patience` rounds; returns the
/// best-validation model.
pub fn train(
    data: &GameData,
    trunk: Trunk,
    config: &TrainConfig,
    obs: &mut dyn Observer,
) -> Result<(Model, TrainingLog), ProtoError> {
    config.validate()?;
    data.validate(config.game_off)?;
    if data.valid.is_empty() {
        log::warn!("empty validation set; patience will stop training early");
    }
    let model = init_model(trunk, config, data)?;
    let mut state = GameState::new(model, config.clone());

    let mut records = Vec::new();
    let mut best = (state.model.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut prev_objective = None;
    for epoch in 1..=config.max_epochs {
        let loss_d = train_epoch_detector(&mut state, &data.detector, obs)?;
        let loss_c = if config.game_off { None } else { Some(train_epoch_calibrator(&mut state, &data.calibrator, obs)?) };
        let mut objective = mean_loss(&state.model, Role::Detector, &data.detector)?;
        if !config.game_off {
            objective += mean_loss(&state.model, Role::Calibrator, &data.calibrator)?;
        }
        let balance_gap = prev_objective.map(|p| compute_balance_gap(p, objective));
        let bg_warning = balance_gap.is_some_and(|b: f64| b.abs() > config.bg_warn_threshold);
        if bg_warning {
            log::warn!("epoch {epoch}: |balance gap| {:.4} above {}", balance_gap.unwrap_or_default().abs(), config.bg_warn_threshold);
        }
        let val_f1 = validation_f1(&state.model, &data.valid)?;
        log::info!("epoch {epoch}: loss_d {loss_d:.4} loss_c {loss_c:?} R {objective:.4} val_f1 {val_f1:.4}");
        let record = EpochRecord { epoch, loss_d, loss_c, objective, balance_gap, val_f1, bg_warning };
        records.push(record.clone());
        obs.round(&record, &mut state);
        prev_objective = Some(objective);

        if val_f1 > best.2 {
            best = (state.model.clone(), epoch, val_f1);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    let (model, best_epoch, best_val_f1) = best;
    Ok((model, TrainingLog { records, stop_reason, best_epoch, best_val_f1 }))
}

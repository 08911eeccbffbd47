//! Observer that records every contract the training game must keep.

use std::collections::BTreeSet;

use vulngame::corpus::{Label, SetKind};
use vulngame::nn::OptimizerKind;
use vulngame::protogame::{
    init_model, train, EpochRecord, Example, GameData, GameState, Observer, ParamChecksums, Role, TrainConfig,
    TrainingLog, Trunk,
};

#[derive(Debug, Default)]
pub struct Audit {
    pub batches: usize,
    pub view_violations: Vec<String>,
    pub bank_addrs: BTreeSet<usize>,
    pub freeze_violations: Vec<String>,
    pub second_trunk: bool,
    pub epochs: Vec<Role>,
    /// Epochs per role in which the shared bank changed.
    pub bank_writes: [usize; 2],
    pub rounds: usize,
}

impl Observer for Audit {
    fn wants_checksums(&self) -> bool {
        true
    }

    fn batch(&mut self, role: Role, batch: &[&Example], bank_addr: usize) {
        self.batches += 1;
        self.bank_addrs.insert(bank_addr);
        for e in batch {
            let bad = match role {
                Role::Detector => e.kind == SetKind::Fixed,
                Role::Calibrator => e.kind == SetKind::Unchanged,
            };
            if bad {
                self.view_violations.push(format!("{role} batch holds {} ({})", e.id, e.kind));
            }
        }
    }

    fn epoch(&mut self, role: Role, before: &ParamChecksums, after: &ParamChecksums) {
        self.epochs.push(role);
        self.bank_addrs.insert(before.bank_addr);
        self.bank_addrs.insert(after.bank_addr);
        self.second_trunk |= before.trunk_c.is_some() || after.trunk_c.is_some();
        let frozen = match role {
            Role::Detector => (&before.head_c, &after.head_c),
            Role::Calibrator => (&before.head_d, &after.head_d),
        };
        if frozen.0 != frozen.1 {
            self.freeze_violations.push(format!("epoch {} ({role}) moved the other head", self.epochs.len()));
        }
        if before.bank != after.bank {
            self.bank_writes[role as usize] += 1;
        }
    }

    fn round(&mut self, _record: &EpochRecord, _state: &mut GameState) {
        self.rounds += 1;
    }
}

/// Drives validation F1 through 0, then 2/(k+1), then 1 over the first three
/// rounds with a zero learning rate, by moving the decision threshold down a
/// ranking of the validation samples. F1 is flat from round 3 on.
pub struct Plateau {
    /// Validation probabilities, highest first.
    pub ranked: Vec<f64>,
    pub positives: usize,
}

impl Plateau {
    /// Relabel `data.valid` so the top half by initial probability is vulnerable.
    pub fn prepare(data: &mut GameData, trunk: &Trunk, config: &TrainConfig) -> Plateau {
        let model = init_model(trunk.clone(), config, data).unwrap();
        let mut scored: Vec<(f64, usize)> =
            data.valid.iter().enumerate().map(|(i, e)| (model.predict_inputs(&e.inputs).unwrap().probability, i)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let positives = scored.len() / 2;
        for (rank, &(_, i)) in scored.iter().enumerate() {
            let e = &mut data.valid[i];
            (e.kind, e.label) =
                if rank < positives { (SetKind::Vulnerable, Label::Vulnerable) } else { (SetKind::Unchanged, Label::NonVulnerable) };
        }
        Plateau { ranked: scored.into_iter().map(|s| s.0).collect(), positives }
    }
}

impl Observer for Plateau {
    fn round(&mut self, record: &EpochRecord, state: &mut GameState) {
        match record.epoch {
            1 => state.model.threshold = Some(self.ranked[0]),
            2 => state.model.threshold = Some(self.ranked[self.positives - 1]),
            _ => {}
        }
    }
}

/// Zero-rate, threshold-1 run whose validation F1 peaks at round 3.
pub fn scripted_plateau(patience: usize) -> (TrainingLog, Plateau) {
    let (mut data, trunk, cfg) = super::small_game(5);
    let config = TrainConfig { lr: 0.0, optimizer: OptimizerKind::Sgd, threshold: Some(1.0), patience, ..cfg.train_config() };
    let mut script = Plateau::prepare(&mut data, &trunk, &config);
    let (_, log) = train(&data, trunk, &config, &mut script).unwrap();
    (log, script)
}

//! Prototype losses, the two players and their alternating training game.
//!
//! Both players read one encoder trunk and one [`PrototypeBank`]; each owns a
//! classification head. A round is a detector epoch (calibrator head frozen)
//! followed by a calibrator epoch (detector head frozen).

mod checkpoint;
mod loss;
mod model;
mod train;
mod trunk;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncodeError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{ce_loss, proto_loss, proto_prob, reg_loss, total_loss, total_loss_grad, LossConfig, LossGrad};
pub use model::{predict, Model, Prediction};
pub use train::{
    compute_balance_gap, init_model, mean_loss, train, train_epoch_calibrator, train_epoch_detector, CalibratorBatching,
    EpochRecord, Example, GameData, GameState, NoObserver, Observer, ParamChecksums, StopReason, TrainConfig,
    TrainingLog,
};
pub use trunk::{Trunk, TrunkTrace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtoError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("the {0} view is empty")]
    EmptyView(&'static str),
    #[error("no vulnerable samples in the training split; the game is undefined")]
    NoVulnerable,
    #[error("sample {id} of kind {kind} does not belong in the {role} view")]
    DataView { id: String, kind: String, role: Role },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Detector,
    Calibrator,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Detector => "detector",
            Role::Calibrator => "calibrator",
        })
    }
}

/// One trainable prototype per class, stored as `[m_0, m_1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub dim: usize,
    pub m: Vec<f64>,
}

impl PrototypeBank {
    pub fn new(m0: Vec<f64>, m1: Vec<f64>) -> Result<Self, ProtoError> {
        if m0.len() != m1.len() {
            return Err(ProtoError::Dimension { expected: m0.len(), got: m1.len() });
        }
        if m0.iter().chain(&m1).any(|x| !x.is_finite()) {
            return Err(ProtoError::NonFinite("prototype".into()));
        }
        if m0 == m1 {
            return Err(ProtoError::Config("prototypes must be distinct".into()));
        }
        let dim = m0.len();
        let mut m = m0;
        m.extend(m1);
        Ok(PrototypeBank { dim, m })
    }

    pub fn get(&self, class: usize) -> &[f64] {
        &self.m[class * self.dim..(class + 1) * self.dim]
    }
}

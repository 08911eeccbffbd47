use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::encoder::PathInput;
use crate::nn::{softmax, Mlp};

use super::{LossConfig, PrototypeBank, ProtoError, Role, Trunk};

/// Trunk, both heads and the shared prototype bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub trunk: Trunk,
    /// Calibrator trunk when trunks are not shared.
    pub trunk_c: Option<Trunk>,
    pub head_d: Mlp,
    pub head_c: Mlp,
    pub bank: PrototypeBank,
    pub loss: LossConfig,
    /// Probability cut-off for the vulnerable class; `None` means argmax.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Softmax probability of the vulnerable class under the detector head.
    pub probability: f64,
}

impl Model {
    pub fn trunk_for(&self, role: Role) -> &Trunk {
        match (role, &self.trunk_c) {
            (Role::Calibrator, Some(t)) => t,
            _ => &self.trunk,
        }
    }

    pub fn head(&self, role: Role) -> &Mlp {
        match role {
            Role::Detector => &self.head_d,
            Role::Calibrator => &self.head_c,
        }
    }

    pub fn feature(&self, role: Role, inputs: &[PathInput]) -> Result<Vec<f64>, ProtoError> {
        Ok(self.trunk_for(role).forward(inputs)?.0)
    }

    pub fn predict_inputs(&self, inputs: &[PathInput]) -> Result<Prediction, ProtoError> {
        predict(self, &self.feature(Role::Detector, inputs)?)
    }
}

/// Detector-head decision for a sample feature.
pub fn predict(model: &Model, feature: &[f64]) -> Result<Prediction, ProtoError> {
    if feature.len() != model.head_d.dim {
        return Err(ProtoError::Dimension { expected: model.head_d.dim, got: feature.len() });
    }
    let (logits, _) = model.head_d.forward(feature);
    let probability = softmax(&logits)[1];
    let vulnerable = match model.threshold {
        Some(t) => probability >= t,
        None => logits[1] > logits[0],
    };
    Ok(Prediction { label: if vulnerable { Label::Vulnerable } else { Label::NonVulnerable }, probability })
}

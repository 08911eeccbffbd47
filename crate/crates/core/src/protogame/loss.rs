//! Per-sample losses: softmax cross-entropy of a player head, the prototype
//! distance loss, and the pull-to-own-prototype regulariser.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::nn::{log_sum_exp, Mlp};

use super::{PrototypeBank, ProtoError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Drop the prototype and regulariser terms.
    #[serde(default)]
    pub prototype_off: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { gamma: 1.0, lambda: 0.01, prototype_off: false }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ProtoError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ProtoError::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ProtoError::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        Ok(())
    }
}

fn check_feature(feature: &[f64], dim: usize) -> Result<(), ProtoError> {
    if feature.len() != dim {
        return Err(ProtoError::Dimension { expected: dim, got: feature.len() });
    }
    if feature.iter().any(|x| !x.is_finite()) {
        return Err(ProtoError::NonFinite("feature".into()));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `-log softmax(MLP(tanh(s)))[label]`.
pub fn ce_loss(feature: &[f64], label: Label, head: &Mlp) -> Result<f64, ProtoError> {
    check_feature(feature, head.dim)?;
    let (logits, _) = head.forward(feature);
    Ok(log_sum_exp(&logits) - logits[label.index()])
}

/// Class probabilities from negative scaled squared distances, normalised in log space.
pub fn proto_prob(feature: &[f64], bank: &PrototypeBank, gamma: f64) -> Result<[f64; 2], ProtoError> {
    let lp = proto_log_prob(feature, bank, gamma)?;
    // logistic form of the two-class softmax; exact at equal distances
    let x = lp[1] - lp[0];
    Ok([1.0 / (1.0 + x.exp()), 1.0 / (1.0 + (-x).exp())])
}

fn proto_log_prob(feature: &[f64], bank: &PrototypeBank, gamma: f64) -> Result<[f64; 2], ProtoError> {
    if !(gamma > 0.0) {
        return Err(ProtoError::Config(format!("gamma must be positive, got {gamma}")));
    }
    check_feature(feature, bank.dim)?;
    let logits = [-gamma * sq_dist(feature, bank.get(0)), -gamma * sq_dist(feature, bank.get(1))];
    let lse = log_sum_exp(&logits);
    Ok([logits[0] - lse, logits[1] - lse])
}

pub fn proto_loss(feature: &[f64], label: Label, bank: &PrototypeBank, gamma: f64) -> Result<f64, ProtoError> {
    Ok(-proto_log_prob(feature, bank, gamma)?[label.index()])
}

/// `lambda * ||s - m_label||^2`; with one prototype per class the nearest
/// prototype of the sample's class is `m_label`.
pub fn reg_loss(feature: &[f64], label: Label, bank: &PrototypeBank, lambda: f64) -> Result<f64, ProtoError> {
    check_feature(feature, bank.dim)?;
    Ok(lambda * sq_dist(feature, bank.get(label.index())))
}

pub fn total_loss(feature: &[f64], label: Label, head: &Mlp, bank: &PrototypeBank, config: &LossConfig) -> Result<f64, ProtoError> {
    let ce = ce_loss(feature, label, head)?;
    if config.prototype_off {
        return Ok(ce);
    }
    Ok(ce + proto_loss(feature, label, bank, config.gamma)? + reg_loss(feature, label, bank, config.lambda)?)
}

/// Loss terms and gradients for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub ce: f64,
    pub proto: f64,
    pub reg: f64,
    pub d_feature: Vec<f64>,
    pub d_head: Vec<f64>,
    pub d_bank: Vec<f64>,
}

impl LossGrad {
    pub fn total(&self) -> f64 {
        self.ce + self.proto + self.reg
    }
}

/// Value and analytic gradient of [`total_loss`].
pub fn total_loss_grad(
    feature: &[f64],
    label: Label,
    head: &Mlp,
    bank: &PrototypeBank,
    config: &LossConfig,
) -> Result<LossGrad, ProtoError> {
    check_feature(feature, head.dim)?;
    let l = label.index();
    let mut d_feature = vec![0.0; feature.len()];
    let mut d_head = vec![0.0; head.params.len()];
    let mut d_bank = vec![0.0; bank.m.len()];

    let (logits, trace) = head.forward(feature);
    let lse = log_sum_exp(&logits);
    let ce = lse - logits[l];
    let dlogits: Vec<f64> =
        logits.iter().enumerate().map(|(j, z)| (z - lse).exp() - if j == l { 1.0 } else { 0.0 }).collect();
    head.backward(&trace, &dlogits, &mut d_head, &mut d_feature);

    let (mut proto, mut reg) = (0.0, 0.0);
    if !config.prototype_off {
        let lp = proto_log_prob(feature, bank, config.gamma)?;
        proto = -lp[l];
        // d proto / d dist_j = gamma * (1[j == l] - p_j); d dist_j / d s = 2 (s - m_j)
        for j in 0..2 {
            let coef = config.gamma * (if j == l { 1.0 } else { 0.0 } - lp[j].exp());
            let m = bank.get(j);
            for i in 0..feature.len() {
                let g = 2.0 * coef * (feature[i] - m[i]);
                d_feature[i] += g;
                d_bank[j * bank.dim + i] -= g;
            }
        }
        let m = bank.get(l);
        reg = config.lambda * sq_dist(feature, m);
        for i in 0..feature.len() {
            let g = 2.0 * config.lambda * (feature[i] - m[i]);
            d_feature[i] += g;
            d_bank[l * bank.dim + i] -= g;
        }
    }
    Ok(LossGrad { ce, proto, reg, d_feature, d_head, d_bank })
}

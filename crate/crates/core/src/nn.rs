//! Small dense building blocks with hand-written gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::sha256_hex;

/// Two-layer perceptron applied to `tanh(s)`: `W2 tanh(W1 tanh(s) + b1) + b2`.
///
/// Parameters are one flat vector laid out as `W1 (hidden x dim)`, `b1`,
/// `W2 (outputs x hidden)`, `b2`, all row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub dim: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    z: Vec<f64>,
    a: Vec<f64>,
}

impl Mlp {
    pub fn param_len(dim: usize, hidden: usize, outputs: usize) -> usize {
        hidden * dim + hidden + outputs * hidden + outputs
    }

    pub fn zeros(dim: usize, hidden: usize, outputs: usize) -> Self {
        Mlp { dim, hidden, outputs, params: vec![0.0; Self::param_len(dim, hidden, outputs)] }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(dim: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(dim, hidden, outputs);
        let a1 = (6.0 / (dim + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + outputs) as f64).sqrt();
        let (w1, rest) = m.params.split_at_mut(hidden * dim);
        for w in w1 {
            *w = rng.gen_range(-a1..a1);
        }
        for w in &mut rest[hidden..hidden + outputs * hidden] {
            *w = rng.gen_range(-a2..a2);
        }
        m
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.dim;
        let w2 = b1 + self.hidden;
        (b1, w2, w2 + self.outputs * self.hidden)
    }

    pub fn forward(&self, s: &[f64]) -> (Vec<f64>, MlpTrace) {
        debug_assert_eq!(s.len(), self.dim);
        let (ob1, ow2, ob2) = self.offsets();
        let p = &self.params;
        let z: Vec<f64> = s.iter().map(|x| x.tanh()).collect();
        let a: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &p[h * self.dim..(h + 1) * self.dim];
                (p[ob1 + h] + row.iter().zip(&z).map(|(w, x)| w * x).sum::<f64>()).tanh()
            })
            .collect();
        let logits = (0..self.outputs)
            .map(|o| {
                let row = &p[ow2 + o * self.hidden..ow2 + (o + 1) * self.hidden];
                p[ob2 + o] + row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        (logits, MlpTrace { z, a })
    }

    /// Accumulate parameter gradients into `dparams` and input gradients into `ds`.
    pub fn backward(&self, trace: &MlpTrace, dlogits: &[f64], dparams: &mut [f64], ds: &mut [f64]) {
        let (ob1, ow2, ob2) = self.offsets();
        let p = &self.params;
        let mut da = vec![0.0; self.hidden];
        for (o, &g) in dlogits.iter().enumerate() {
            dparams[ob2 + o] += g;
            for h in 0..self.hidden {
                dparams[ow2 + o * self.hidden + h] += g * trace.a[h];
                da[h] += g * p[ow2 + o * self.hidden + h];
            }
        }
        let mut dz = vec![0.0; self.dim];
        for h in 0..self.hidden {
            let dpre = da[h] * (1.0 - trace.a[h] * trace.a[h]);
            if dpre == 0.0 {
                continue;
            }
            dparams[ob1 + h] += dpre;
            let row = h * self.dim;
            for i in 0..self.dim {
                dparams[row + i] += dpre * trace.z[i];
                dz[i] += dpre * p[row + i];
            }
        }
        for i in 0..self.dim {
            ds[i] += dz[i] * (1.0 - trace.z[i] * trace.z[i]);
        }
    }
}

/// `log(sum(exp(x)))` without overflow.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

/// SHA-256 over the little-endian bytes of every value.
pub fn checksum(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Per-parameter-group optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        let state = if kind == OptimizerKind::Adam { len } else { 0 };
        Optimizer { kind, lr, m: vec![0.0; state], v: vec![0.0; state], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.t);
                let c2 = 1.0 - Self::BETA2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

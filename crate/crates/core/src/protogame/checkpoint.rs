//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` metadata length, JSON metadata
//! (the model with its parameter vectors emptied, plus seed, epoch and the
//! run configuration), then every parameter as little-endian `f64` in the
//! order trunk, calibrator trunk, detector head, calibrator head, prototypes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;

use super::{Model, ProtoError};

const MAGIC: &[u8; 8] = b"VGCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub epoch: usize,
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: Model,
    seed: u64,
    epoch: usize,
    config: serde_json::Value,
    lengths: Vec<usize>,
}

fn slots(m: &mut Model) -> Vec<&mut Vec<f64>> {
    let mut v = vec![&mut m.trunk.params];
    if let Some(t) = m.trunk_c.as_mut() {
        v.push(&mut t.params);
    }
    v.push(&mut m.head_d.params);
    v.push(&mut m.head_c.params);
    v.push(&mut m.bank.m);
    v
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut skeleton = self.model.clone();
        let mut values = Vec::new();
        let mut lengths = Vec::new();
        for s in slots(&mut skeleton) {
            lengths.push(s.len());
            values.extend(std::mem::take(s));
        }
        let meta = Meta { model: skeleton, seed: self.seed, epoch: self.epoch, config: self.config.clone(), lengths };
        let json = serde_json::to_vec(&meta).expect("metadata serialises");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtoError> {
        let bad = |m: &str| ProtoError::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(20..20 + n).ok_or_else(|| bad("truncated metadata"))?;
        let mut meta: Meta = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
        let body = &bytes[20 + n..];
        let total: usize = meta.lengths.iter().sum();
        if body.len() != 8 * total {
            return Err(bad("parameter block has the wrong length"));
        }
        let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut slot_list = slots(&mut meta.model);
        if slot_list.len() != meta.lengths.len() {
            return Err(bad("parameter groups do not match the model"));
        }
        for (s, &len) in slot_list.iter_mut().zip(&meta.lengths) {
            s.extend(values.by_ref().take(len));
        }
        Ok(Checkpoint { model: meta.model, seed: meta.seed, epoch: meta.epoch, config: meta.config })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ProtoError> {
    write_atomic(path, &ckpt.to_bytes()).map_err(|e| ProtoError::Io(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ProtoError> {
    let bytes = std::fs::read(path).map_err(|e| ProtoError::Io(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}

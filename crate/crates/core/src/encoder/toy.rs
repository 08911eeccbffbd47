use serde::{Deserialize, Serialize};

use super::{checked_tokens, EncodeError, PathEncoder, PathInput};

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashed bag of tokens followed by a fixed random projection.
///
/// Token `t` lands in bucket `fnv1a64(t) % buckets` with sign `-1` when the
/// hash's top bit is set; counts are scaled by `1/sqrt(n_tokens)`. Projection
/// entry `(r, b)` is `2u - 1` with `u` the top 53 bits of
/// `splitmix64(seed ^ (b * dim + r))` as a unit fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub dim: usize,
    pub buckets: usize,
    pub seed: u64,
    pub max_tokens: usize,
}

impl ToyEncoder {
    pub fn new(dim: usize, buckets: usize, seed: u64) -> Self {
        ToyEncoder { dim, buckets, seed, max_tokens: 512 }
    }

    pub fn hashed_counts(&self, text: &str) -> Result<Vec<(u32, f64)>, EncodeError> {
        let toks = checked_tokens(text, self.max_tokens)?;
        let mut counts = vec![0.0; self.buckets];
        for t in &toks {
            let h = fnv1a64(t.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            counts[(h % self.buckets as u64) as usize] += sign;
        }
        let scale = 1.0 / (toks.len() as f64).sqrt();
        Ok(counts.into_iter().enumerate().filter(|(_, c)| *c != 0.0).map(|(b, c)| (b as u32, c * scale)).collect())
    }

    pub fn projection_entry(&self, r: usize, b: usize) -> f64 {
        let u = (splitmix64(self.seed ^ (b * self.dim + r) as u64) >> 11) as f64 / (1u64 << 53) as f64;
        2.0 * u - 1.0
    }

    /// Row-major `dim x buckets` projection matrix.
    pub fn projection(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim * self.buckets];
        for r in 0..self.dim {
            for b in 0..self.buckets {
                p[r * self.buckets + b] = self.projection_entry(r, b);
            }
        }
        p
    }
}

impl PathEncoder for ToyEncoder {
    fn id(&self) -> String {
        format!("toy-fnv-d{}-b{}-s{}", self.dim, self.buckets, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn input(&self, rendered_text: &str) -> Result<PathInput, EncodeError> {
        self.hashed_counts(rendered_text).map(PathInput::Sparse)
    }

    fn encode(&self, rendered_text: &str) -> Result<Vec<f64>, EncodeError> {
        let h = self.hashed_counts(rendered_text)?;
        Ok((0..self.dim).map(|r| h.iter().map(|&(b, v)| self.projection_entry(r, b as usize) * v).sum()).collect())
    }
}

//! Path encoders and the convolutional fusion of per-path vectors into one
//! sample feature.
//!
//! An encoder turns a rendered path into a [`PathInput`]. For the toy encoder
//! that input is a sparse hashed token-count vector and the projection to `d`
//! dimensions lives in the trainable trunk; the reference encoder hands over a
//! precomputed dense vector.

mod cache;
mod fusion;
mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{EmbeddingCache, ReferenceEncoder, CACHE_ENV};
pub use fusion::{fuse_paths, ConvConfig, ConvFusion, FusionTrace};
pub use toy::{fnv1a64, splitmix64, ToyEncoder};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("empty token sequence")]
    Empty,
    #[error("{tokens} tokens exceed the encoder limit of {limit}")]
    TooLong { tokens: usize, limit: usize },
    #[error("sample {sample_id} path {path_index}: {source}")]
    InPath {
        sample_id: String,
        path_index: usize,
        #[source]
        source: Box<EncodeError>,
    },
    #[error("no cached embedding for text hash {0}")]
    CacheMiss(String),
    #[error("cache entry {0} is corrupt")]
    CorruptCache(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl EncodeError {
    pub fn in_path(self, sample_id: &str, path_index: usize) -> Self {
        EncodeError::InPath { sample_id: sample_id.to_string(), path_index, source: Box::new(self) }
    }
}

/// Trunk-ready representation of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PathInput {
    /// (bucket, value) pairs sorted by bucket; projected by the trunk.
    Sparse(Vec<(u32, f64)>),
    Dense(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEmbedding {
    pub vector: Vec<f64>,
    pub path_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFeature {
    pub sample_id: String,
    pub vector: Vec<f64>,
}

pub trait PathEncoder: Send + Sync {
    /// Stable identifier, part of cache keys and manifests.
    fn id(&self) -> String;
    /// Output dimension `d` of one path embedding.
    fn dim(&self) -> usize;
    fn max_tokens(&self) -> usize;
    fn input(&self, rendered_text: &str) -> Result<PathInput, EncodeError>;
    /// The encoder's own summary vector for a path (inference mode).
    fn encode(&self, rendered_text: &str) -> Result<Vec<f64>, EncodeError>;
}

/// Encode one path; errors name the sample and path.
pub fn encode_path(
    encoder: &dyn PathEncoder,
    sample_id: &str,
    path_index: usize,
    rendered_text: &str,
) -> Result<PathEmbedding, EncodeError> {
    let vector = encoder.encode(rendered_text).map_err(|e| e.in_path(sample_id, path_index))?;
    Ok(PathEmbedding { vector, path_index })
}

/// Whitespace tokens of a rendered path, checked against the encoder limit.
pub(crate) fn checked_tokens(text: &str, limit: usize) -> Result<Vec<&str>, EncodeError> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.is_empty() {
        return Err(EncodeError::Empty);
    }
    if toks.len() > limit {
        return Err(EncodeError::TooLong { tokens: toks.len(), limit });
    }
    Ok(toks)
}

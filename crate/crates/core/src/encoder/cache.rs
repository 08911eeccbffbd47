use std::path::{Path, PathBuf};

use crate::artifact::{sha256_hex, write_atomic};

use super::{checked_tokens, EncodeError, PathEncoder, PathInput};

/// Overrides the embedding cache directory.
pub const CACHE_ENV: &str = "VULNGAME_CACHE_DIR";

/// On-disk vectors keyed by (encoder id, sha256 of the text), stored as raw
/// little-endian f64 at `<root>/<encoder id>/<hash>.f64`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingCache {
    root: PathBuf,
}

impl EmbeddingCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        EmbeddingCache { root: root.into() }
    }

    /// The directory named by [`CACHE_ENV`], else `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(d) if !d.is_empty() => EmbeddingCache::new(d),
            _ => EmbeddingCache::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, encoder_id: &str, text: &str) -> PathBuf {
        self.root.join(encoder_id).join(format!("{}.f64", sha256_hex(text.as_bytes())))
    }

    pub fn get(&self, encoder_id: &str, text: &str) -> Result<Option<Vec<f64>>, EncodeError> {
        let p = self.entry_path(encoder_id, text);
        let bytes = match std::fs::read(&p) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(EncodeError::Io(e.to_string())),
        };
        if bytes.len() % 8 != 0 {
            return Err(EncodeError::CorruptCache(p.display().to_string()));
        }
        Ok(Some(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect()))
    }

    pub fn put(&self, encoder_id: &str, text: &str, vector: &[f64]) -> Result<(), EncodeError> {
        let bytes: Vec<u8> = vector.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_atomic(&self.entry_path(encoder_id, text), &bytes).map_err(|e| EncodeError::Io(e.to_string()))
    }
}

/// Pretrained-transformer encoder backed by vectors exported ahead of time
/// into an [`EmbeddingCache`] (first-position summary token, one file per path
/// text). Nothing is computed here; a cache miss is an error.
#[derive(Debug, Clone)]
pub struct ReferenceEncoder {
    pub name: String,
    pub dim: usize,
    pub max_tokens: usize,
    cache: EmbeddingCache,
}

impl ReferenceEncoder {
    pub fn new(name: impl Into<String>, dim: usize, cache: EmbeddingCache) -> Self {
        ReferenceEncoder { name: name.into(), dim, max_tokens: 512, cache }
    }
}

impl PathEncoder for ReferenceEncoder {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn input(&self, rendered_text: &str) -> Result<PathInput, EncodeError> {
        self.encode(rendered_text).map(PathInput::Dense)
    }

    fn encode(&self, rendered_text: &str) -> Result<Vec<f64>, EncodeError> {
        checked_tokens(rendered_text, self.max_tokens)?;
        let v = self
            .cache
            .get(&self.name, rendered_text)?
            .ok_or_else(|| EncodeError::CacheMiss(sha256_hex(rendered_text.as_bytes())))?;
        if v.len() != self.dim {
            return Err(EncodeError::Dimension { expected: self.dim, got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EncodeError::CorruptCache(self.cache.entry_path(&self.name, rendered_text).display().to_string()));
        }
        Ok(v)
    }
}

use serde::{Deserialize, Serialize};

use super::{EncodeError, PathEmbedding, SampleFeature};

/// 1-D convolution over the concatenated path vectors.
///
/// The N path vectors form one single-channel signal of length `N * dim`.
/// Each kernel size contributes `out_channels` globally max-pooled outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_sizes: Vec<usize>,
    pub dim: usize,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig { in_channels: 1, out_channels: 8, kernel_sizes: vec![3], dim: 32 }
    }
}

impl ConvConfig {
    pub fn validate(&self, n_paths: usize) -> Result<(), EncodeError> {
        if self.in_channels != 1 {
            return Err(EncodeError::Config(format!("in_channels must be 1 for the concatenated layout, got {}", self.in_channels)));
        }
        if self.out_channels == 0 || self.dim == 0 || n_paths == 0 {
            return Err(EncodeError::Config("out_channels, dim and path count must be positive".into()));
        }
        if self.kernel_sizes.is_empty() {
            return Err(EncodeError::Config("at least one kernel size is required".into()));
        }
        if let Some(&k) = self.kernel_sizes.iter().find(|&&k| k == 0 || k > n_paths * self.dim) {
            return Err(EncodeError::Config(format!("kernel size {k} outside 1..={}", n_paths * self.dim)));
        }
        Ok(())
    }
}

/// Parameter layout and arithmetic of the fusion layer for a fixed path count.
///
/// Parameters are stored per kernel size as `out_channels x k` weights
/// followed by `out_channels` biases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvFusion {
    pub config: ConvConfig,
    pub n_paths: usize,
}

/// Argmax positions remembered for the backward pass, one per pooled output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionTrace {
    pub argmax: Vec<usize>,
}

impl ConvFusion {
    pub fn new(config: ConvConfig, n_paths: usize) -> Result<Self, EncodeError> {
        config.validate(n_paths)?;
        Ok(ConvFusion { config, n_paths })
    }

    pub fn signal_len(&self) -> usize {
        self.n_paths * self.config.dim
    }

    pub fn pooled_len(&self) -> usize {
        self.config.out_channels * self.config.kernel_sizes.len()
    }

    pub fn output_dim(&self) -> usize {
        self.pooled_len() + self.signal_len()
    }

    pub fn param_len(&self) -> usize {
        self.config.kernel_sizes.iter().map(|k| self.config.out_channels * (k + 1)).sum()
    }

    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        // (kernel size, parameter offset)
        let c = self.config.out_channels;
        self.config.kernel_sizes.iter().scan(0, move |off, &k| {
            let here = *off;
            *off += c * (k + 1);
            Some((k, here))
        })
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<(Vec<f64>, FusionTrace), EncodeError> {
        if x.len() != self.signal_len() {
            return Err(EncodeError::Dimension { expected: self.signal_len(), got: x.len() });
        }
        if params.len() != self.param_len() {
            return Err(EncodeError::Dimension { expected: self.param_len(), got: params.len() });
        }
        let c_out = self.config.out_channels;
        let mut out = Vec::with_capacity(self.output_dim());
        let mut argmax = Vec::with_capacity(self.pooled_len());
        for (k, off) in self.blocks() {
            let (w, b) = params[off..off + c_out * (k + 1)].split_at(c_out * k);
            for c in 0..c_out {
                let wc = &w[c * k..(c + 1) * k];
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for p in 0..=x.len() - k {
                    let y = b[c] + wc.iter().zip(&x[p..p + k]).map(|(a, v)| a * v).sum::<f64>();
                    if y > best {
                        best = y;
                        at = p;
                    }
                }
                out.push(best);
                argmax.push(at);
            }
        }
        out.extend_from_slice(x);
        Ok((out, FusionTrace { argmax }))
    }

    /// Accumulate gradients of the upstream `ds` into `dparams` and `dx`.
    pub fn backward(&self, params: &[f64], x: &[f64], trace: &FusionTrace, ds: &[f64], dparams: &mut [f64], dx: &mut [f64]) {
        let c_out = self.config.out_channels;
        let pooled = self.pooled_len();
        for (dxi, g) in dx.iter_mut().zip(&ds[pooled..]) {
            *dxi += g;
        }
        for (bi, (k, off)) in self.blocks().enumerate() {
            for c in 0..c_out {
                let i = bi * c_out + c;
                let g = ds[i];
                if g == 0.0 {
                    continue;
                }
                let p = trace.argmax[i];
                for t in 0..k {
                    dparams[off + c * k + t] += g * x[p + t];
                    dx[p + t] += g * params[off + c * k + t];
                }
                dparams[off + c_out * k + c] += g;
            }
        }
    }
}

/// Fuse exactly N path embeddings into the sample feature.
pub fn fuse_paths(
    sample_id: &str,
    embeddings: &[PathEmbedding],
    fusion: &ConvFusion,
    params: &[f64],
) -> Result<SampleFeature, EncodeError> {
    if embeddings.len() != fusion.n_paths {
        return Err(EncodeError::Dimension { expected: fusion.n_paths, got: embeddings.len() });
    }
    let mut x = Vec::with_capacity(fusion.signal_len());
    for e in embeddings {
        if e.vector.len() != fusion.config.dim {
            return Err(EncodeError::Dimension { expected: fusion.config.dim, got: e.vector.len() });
        }
        x.extend_from_slice(&e.vector);
    }
    let (vector, _) = fusion.forward(params, &x)?;
    Ok(SampleFeature { sample_id: sample_id.to_string(), vector })
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{ConvFusion, FusionTrace, PathInput, ToyEncoder};

use super::ProtoError;

/// Shared feature extractor: optional projection of sparse path inputs to
/// `dim`, then the convolutional fusion.
///
/// `params` holds the `dim x buckets` projection (when present) followed by
/// the fusion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trunk {
    pub buckets: Option<usize>,
    pub fusion: ConvFusion,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrunkTrace {
    pub x: Vec<f64>,
    fusion: FusionTrace,
}

impl Trunk {
    /// Projection initialised from the toy encoder, so the untrained trunk
    /// reproduces the encoder's own path vectors.
    pub fn for_toy<R: Rng>(encoder: &ToyEncoder, fusion: ConvFusion, rng: &mut R) -> Result<Self, ProtoError> {
        if fusion.config.dim != encoder.dim {
            return Err(ProtoError::Dimension { expected: encoder.dim, got: fusion.config.dim });
        }
        let mut params = encoder.projection();
        params.extend(init_fusion(&fusion, rng));
        Ok(Trunk { buckets: Some(encoder.buckets), fusion, params })
    }

    /// Trunk over precomputed dense path vectors.
    pub fn for_dense<R: Rng>(fusion: ConvFusion, rng: &mut R) -> Self {
        let params = init_fusion(&fusion, rng);
        Trunk { buckets: None, fusion, params }
    }

    pub fn dim(&self) -> usize {
        self.fusion.config.dim
    }

    pub fn n_paths(&self) -> usize {
        self.fusion.n_paths
    }

    pub fn output_dim(&self) -> usize {
        self.fusion.output_dim()
    }

    fn proj_len(&self) -> usize {
        self.buckets.map_or(0, |b| b * self.dim())
    }

    /// Concatenated path vectors, the signal the fusion convolves.
    pub fn path_signal(&self, inputs: &[PathInput]) -> Result<Vec<f64>, ProtoError> {
        if inputs.len() != self.n_paths() {
            return Err(ProtoError::Dimension { expected: self.n_paths(), got: inputs.len() });
        }
        let d = self.dim();
        let mut x = Vec::with_capacity(self.fusion.signal_len());
        for input in inputs {
            match (input, self.buckets) {
                (PathInput::Sparse(h), Some(b)) => {
                    let p = &self.params[..self.proj_len()];
                    for r in 0..d {
                        let row = &p[r * b..(r + 1) * b];
                        x.push(h.iter().map(|&(k, v)| row[k as usize] * v).sum());
                    }
                }
                (PathInput::Dense(v), None) => {
                    if v.len() != d {
                        return Err(ProtoError::Dimension { expected: d, got: v.len() });
                    }
                    x.extend_from_slice(v);
                }
                _ => return Err(ProtoError::Config("path input kind does not match the trunk".into())),
            }
        }
        Ok(x)
    }

    pub fn forward(&self, inputs: &[PathInput]) -> Result<(Vec<f64>, TrunkTrace), ProtoError> {
        let x = self.path_signal(inputs)?;
        let (s, fusion) = self.fusion.forward(&self.params[self.proj_len()..], &x)?;
        Ok((s, TrunkTrace { x, fusion }))
    }

    pub fn backward(&self, inputs: &[PathInput], trace: &TrunkTrace, ds: &[f64], dparams: &mut [f64]) {
        let pl = self.proj_len();
        let mut dx = vec![0.0; trace.x.len()];
        let (dproj, dconv) = dparams.split_at_mut(pl);
        self.fusion.backward(&self.params[pl..], &trace.x, &trace.fusion, ds, dconv, &mut dx);
        if let Some(b) = self.buckets {
            let d = self.dim();
            for (j, input) in inputs.iter().enumerate() {
                let PathInput::Sparse(h) = input else { continue };
                for r in 0..d {
                    let g = dx[j * d + r];
                    if g == 0.0 {
                        continue;
                    }
                    for &(k, v) in h {
                        dproj[r * b + k as usize] += g * v;
                    }
                }
            }
        }
    }
}

fn init_fusion<R: Rng>(fusion: &ConvFusion, rng: &mut R) -> Vec<f64> {
    let c = fusion.config.out_channels;
    let mut p = Vec::with_capacity(fusion.param_len());
    for &k in &fusion.config.kernel_sizes {
        let a = 1.0 / (k as f64).sqrt();
        p.extend((0..c * k).map(|_| rng.gen_range(-a..a)));
        p.extend(std::iter::repeat_n(0.0, c));
    }
    p
}

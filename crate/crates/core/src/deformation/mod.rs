//! Per-frame deformation of canonical Gaussians.
//!
//! For a canonical Gaussian at `μ` and timestamp `t`, the field concatenates
//! the 2D spatial hash features of `μ`, the 3D temporal hash features of
//! `(μ, t)` and the sin/cos encoding of `t`, runs the result through a shared
//! ReLU trunk and reads `(Δμ, Δc)` off two linear heads. The deformed
//! Gaussian is `(μ + Δμ, c + Δc, Σ)`; the covariance is never deformed.

pub mod mlp;

use ndarray::{Array2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::ConfigError;
use crate::gaussian2d::{GaussianGrad, GaussianSet};
use crate::hash_encoding::{HashGrid, HashGridConfig};
pub use mlp::{Dense, Mlp, MlpCache};

/// Which hash encoders feed the trunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodingVariant {
    SpatioTemporal,
    SpatialOnly,
    TemporalOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldConfig {
    pub spatial: Option<HashGridConfig>,
    pub temporal: Option<HashGridConfig>,
    pub posenc_freqs: usize,
    pub hidden_width: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            spatial: Some(HashGridConfig::spatial_default()),
            temporal: Some(HashGridConfig::temporal_default()),
            posenc_freqs: 6,
            hidden_width: 128,
        }
    }
}

impl FieldConfig {
    pub fn with_variant(mut self, variant: EncodingVariant) -> Self {
        match variant {
            EncodingVariant::SpatioTemporal => {}
            EncodingVariant::SpatialOnly => self.temporal = None,
            EncodingVariant::TemporalOnly => self.spatial = None,
        }
        self
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial.map_or(0, |c| c.output_dim())
    }

    pub fn temporal_dim(&self) -> usize {
        self.temporal.map_or(0, |c| c.output_dim())
    }

    /// Trunk input width: spatial + temporal features + `2K` encoding terms.
    pub fn input_dim(&self) -> usize {
        self.spatial_dim() + self.temporal_dim() + 2 * self.posenc_freqs
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(c) = &self.spatial {
            c.validate()?;
            if c.dims != 2 {
                return Err(ConfigError::Invalid("spatial grid must be 2D".into()));
            }
        }
        if let Some(c) = &self.temporal {
            c.validate()?;
            if c.dims != 3 {
                return Err(ConfigError::Invalid("temporal grid must be 3D".into()));
            }
        }
        if self.hidden_width == 0 {
            return Err(ConfigError::Invalid("hidden width must be positive".into()));
        }
        // the stream header stores these as single bytes
        let grids = [self.spatial, self.temporal];
        if self.posenc_freqs > 255
            || grids.iter().flatten().any(|g| g.levels > 255 || g.features_per_level > 255)
        {
            return Err(ConfigError::Invalid("levels, features and frequencies must fit in a byte".into()));
        }
        if self.input_dim() == 0 {
            return Err(ConfigError::Invalid("deformation field has no inputs".into()));
        }
        Ok(())
    }
}

/// `(sin(2^k π t), cos(2^k π t))` for `k = 0..K`, sine first in each pair.
pub fn positional_encoding(t: f64, num_freqs: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * num_freqs];
    positional_encoding_into(t, &mut out);
    out
}

fn positional_encoding_into(t: f64, out: &mut [f64]) {
    for (k, pair) in out.chunks_exact_mut(2).enumerate() {
        let phase = (1u64 << k) as f64 * std::f64::consts::PI * t;
        pair[0] = phase.sin();
        pair[1] = phase.cos();
    }
}

/// Timestamp of frame `offset` inside a group of `len` frames, in `[0,1]`.
pub fn frame_timestamp(offset: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        offset as f64 / (len - 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    config: FieldConfig,
    pub spatial: Option<HashGrid>,
    pub temporal: Option<HashGrid>,
    pub mlp: Mlp,
}

/// Gradient container with the same tensor layout as the field.
pub type FieldGrad = DeformationField;

/// Forward intermediates needed by [`DeformationField::backward`].
#[derive(Clone, Debug)]
pub struct DeformCache {
    mlp: MlpCache,
}

impl DeformationField {
    pub fn new<R: Rng>(config: FieldConfig, rng: &mut R) -> Result<Self, ConfigError> {
        config.validate()?;
        let spatial = config.spatial.map(|c| HashGrid::new(c, rng)).transpose()?;
        let temporal = config.temporal.map(|c| HashGrid::new(c, rng)).transpose()?;
        let mlp = Mlp::new(config.input_dim(), config.hidden_width, rng);
        Ok(Self {
            config,
            spatial,
            temporal,
            mlp,
        })
    }

    pub fn zeros(config: FieldConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            spatial: config.spatial.map(HashGrid::zeros).transpose()?,
            temporal: config.temporal.map(HashGrid::zeros).transpose()?,
            mlp: Mlp::zeros(config.input_dim(), config.hidden_width),
            config,
        })
    }

    pub fn zeros_like(&self) -> FieldGrad {
        Self::zeros(self.config).expect("validated config")
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    /// Every learnable tensor in a fixed order: hash tables (spatial, temporal)
    /// followed by weight and bias of each dense layer (trunk 1, trunk 2,
    /// position head, color head).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(10);
        out.extend(self.spatial.iter().map(|g| g.tables()));
        out.extend(self.temporal.iter().map(|g| g.tables()));
        for layer in self.mlp.layers() {
            out.push(layer.weight.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(10);
        out.extend(self.spatial.iter_mut().map(|g| g.tables_mut()));
        out.extend(self.temporal.iter_mut().map(|g| g.tables_mut()));
        for layer in self.mlp.layers_mut() {
            let Dense { weight, bias } = layer;
            out.push(weight.as_slice_mut().expect("standard layout"));
            out.push(bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn features(&self, set: &GaussianSet, t: f64) -> Array2<f64> {
        let ds = self.config.spatial_dim();
        let dt = self.config.temporal_dim();
        let mut feats = Array2::zeros((set.len(), self.config.input_dim()));
        feats
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(set.gaussians.par_iter())
            .for_each(|(mut row, g)| {
                let row = row.as_slice_mut().expect("row-major");
                if let Some(grid) = &self.spatial {
                    grid.encode_into(&g.mu, &mut row[..ds]);
                }
                if let Some(grid) = &self.temporal {
                    grid.encode_into(&[g.mu[0], g.mu[1], t], &mut row[ds..ds + dt]);
                }
                positional_encoding_into(t, &mut row[ds + dt..]);
            });
        feats
    }

    /// Deformed copy of `set` at timestamp `t`. Positions are left unclamped.
    pub fn deform(&self, set: &GaussianSet, t: f64) -> GaussianSet {
        self.forward(set, t).0
    }

    pub fn forward(&self, set: &GaussianSet, t: f64) -> (GaussianSet, DeformCache) {
        let (dmu, dcolor, cache) = self.mlp.forward(self.features(set, t));
        let mut out = set.clone();
        for (i, g) in out.gaussians.iter_mut().enumerate() {
            g.mu[0] += dmu[[i, 0]];
            g.mu[1] += dmu[[i, 1]];
            for c in 0..3 {
                g.color[c] += dcolor[[i, c]];
            }
        }
        (out, DeformCache { mlp: cache })
    }

    /// Chain rule from per-Gaussian gradients on the deformed set back to the
    /// field parameters and the canonical Gaussians.
    pub fn backward(
        &self,
        set: &GaussianSet,
        t: f64,
        cache: &DeformCache,
        upstream: &[GaussianGrad],
    ) -> (FieldGrad, Vec<GaussianGrad>) {
        assert_eq!(upstream.len(), set.len());
        let n = set.len();
        let grad_mu = Array2::from_shape_fn((n, 2), |(i, k)| upstream[i].mu[k]);
        let grad_color = Array2::from_shape_fn((n, 3), |(i, k)| upstream[i].color[k]);
        let mut grad = self.zeros_like();
        let grad_in = self
            .mlp
            .backward(&cache.mlp, grad_mu.view(), grad_color.view(), &mut grad.mlp);

        let ds = self.config.spatial_dim();
        let dt = self.config.temporal_dim();
        let mut canonical = upstream.to_vec();
        for (i, g) in set.gaussians.iter().enumerate() {
            let row = grad_in.row(i);
            let row = row.as_slice().expect("row-major");
            if let (Some(grid), Some(tg)) = (&self.spatial, &mut grad.spatial) {
                let mut xg = [0.0; 2];
                grid.encode_backward(&g.mu, &row[..ds], tg.tables_mut(), &mut xg);
                canonical[i].mu[0] += xg[0];
                canonical[i].mu[1] += xg[1];
            }
            if let (Some(grid), Some(tg)) = (&self.temporal, &mut grad.temporal) {
                let mut xg = [0.0; 3];
                grid.encode_backward(
                    &[g.mu[0], g.mu[1], t],
                    &row[ds..ds + dt],
                    tg.tables_mut(),
                    &mut xg,
                );
                canonical[i].mu[0] += xg[0];
                canonical[i].mu[1] += xg[1];
            }
        }
        (grad, canonical)
    }
}

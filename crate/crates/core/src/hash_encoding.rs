//! Multiresolution hash grids over `[0,1]^d` for `d ∈ {2, 3}`.
//!
//! Level `l` has resolution `N_l = ⌊N_min · b^l⌋`. A point is scaled by
//! `N_l`, the `2^d` corners of its cell are hashed into a table of `T`
//! feature vectors of width `F`, and the corner features are multilinearly
//! interpolated. Level outputs are concatenated coarse to fine.

use rand::Rng;

use crate::error::ConfigError;

/// Per-dimension hashing primes.
pub const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

const MAX_DIMS: usize = 3;
const MAX_CORNERS: usize = 1 << MAX_DIMS;

/// Range of the uniform initialization of table entries.
pub const INIT_RANGE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HashGridConfig {
    pub dims: usize,
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: u32,
    pub per_level_scale: f64,
}

impl HashGridConfig {
    /// 8 levels, 2^10 entries, base resolution 16, growth 1.5.
    pub fn spatial_default() -> Self {
        Self {
            dims: 2,
            levels: 8,
            features_per_level: 2,
            log2_table_size: 10,
            base_resolution: 16,
            per_level_scale: 1.5,
        }
    }

    /// Same schedule as the spatial grid over `(x, y, t)` with 4 features per level.
    pub fn temporal_default() -> Self {
        Self {
            dims: 3,
            features_per_level: 4,
            ..Self::spatial_default()
        }
    }

    /// Derives the growth factor from the finest resolution:
    /// `b = exp((ln N_max − ln N_min) / (L − 1))`, and `b = 1` when `L = 1`.
    pub fn with_finest_resolution(
        dims: usize,
        levels: usize,
        features_per_level: usize,
        log2_table_size: u32,
        base_resolution: u32,
        finest_resolution: u32,
    ) -> Result<Self, ConfigError> {
        if finest_resolution < base_resolution {
            return Err(ConfigError::Invalid(format!(
                "finest resolution {finest_resolution} below base resolution {base_resolution}"
            )));
        }
        let per_level_scale = if levels <= 1 {
            1.0
        } else {
            (((finest_resolution as f64).ln() - (base_resolution as f64).ln())
                / (levels - 1) as f64)
                .exp()
        };
        let cfg = Self {
            dims,
            levels,
            features_per_level,
            log2_table_size,
            base_resolution,
            per_level_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if !(2..=MAX_DIMS).contains(&self.dims) {
            return fail(format!("hash grid dims must be 2 or 3, got {}", self.dims));
        }
        if self.levels == 0 || self.features_per_level == 0 {
            return fail("hash grid needs at least one level and one feature".into());
        }
        if self.log2_table_size == 0 || self.log2_table_size > 24 {
            return fail(format!("log2 table size {} out of range", self.log2_table_size));
        }
        if self.base_resolution == 0 {
            return fail("base resolution must be positive".into());
        }
        if !(self.per_level_scale.is_finite() && self.per_level_scale >= 1.0) {
            return fail(format!("per-level scale {} must be >= 1", self.per_level_scale));
        }
        let finest = level_resolutions(self).last().copied().unwrap_or(0);
        if finest as u64 >= u32::MAX as u64 / 2 {
            return fail("finest resolution overflows the vertex range".into());
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1 << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn param_count(&self) -> usize {
        self.levels * self.table_size() * self.features_per_level
    }
}

/// `N_l = ⌊N_min · b^l⌋` for `l = 0..L`.
pub fn level_resolutions(config: &HashGridConfig) -> Vec<u32> {
    (0..config.levels)
        .map(|l| {
            let n = config.base_resolution as f64 * config.per_level_scale.powi(l as i32);
            // absorb rounding when b was derived from N_max
            (n * (1.0 + 1e-12)).floor() as u32
        })
        .collect()
}

/// `(⊕_i v_i · π_i) mod T` with wrapping 32-bit products; `T` must be a power of two.
#[inline]
pub fn hash_index(vertex: &[u32], table_size: usize) -> usize {
    debug_assert!(table_size.is_power_of_two());
    let mut h = 0u32;
    for (v, p) in vertex.iter().zip(PRIMES) {
        h ^= v.wrapping_mul(p);
    }
    (h as usize) & (table_size - 1)
}

/// Cell lookup for one level: corner slots with their interpolation weights
/// and the weight derivatives along each axis (already scaled by `N_l`).
struct CellLookup {
    slots: [usize; MAX_CORNERS],
    weights: [f64; MAX_CORNERS],
    dweights: [[f64; MAX_DIMS]; MAX_CORNERS],
    corners: usize,
}

/// Learnable multiresolution hash grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HashGrid {
    config: HashGridConfig,
    resolutions: Vec<u32>,
    /// `levels * T * F` entries; entry `(l, slot, f)` at `(l*T + slot)*F + f`.
    tables: Vec<f64>,
}

impl HashGrid {
    pub fn zeros(config: HashGridConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            resolutions: level_resolutions(&config),
            tables: vec![0.0; config.param_count()],
            config,
        })
    }

    /// Entries drawn uniformly from `[-INIT_RANGE, INIT_RANGE]`.
    pub fn new<R: Rng>(config: HashGridConfig, rng: &mut R) -> Result<Self, ConfigError> {
        let mut grid = Self::zeros(config)?;
        for v in &mut grid.tables {
            *v = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
        }
        Ok(grid)
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn tables(&self) -> &[f64] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [f64] {
        &mut self.tables
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn lookup(&self, x: &[f64], level: usize) -> CellLookup {
        let dims = self.config.dims;
        let res = self.resolutions[level];
        let scale = res as f64;
        let mut base = [0u32; MAX_DIMS];
        let mut frac = [0.0f64; MAX_DIMS];
        let mut live = [true; MAX_DIMS];
        for i in 0..dims {
            let xi = x[i];
            // outside [0,1] the clamp flattens the encoding
            live[i] = (0.0..=1.0).contains(&xi);
            let pos = xi.clamp(0.0, 1.0) * scale;
            // Cell [i0, i0 + 1] with i0 = ⌈pos⌉ − 1, so a point on an interior
            // vertex belongs to the cell on its left.
            let i0 = if pos <= 0.0 { 0.0 } else { pos.ceil() - 1.0 };
            let i0 = i0.min((res.max(1) - 1) as f64);
            base[i] = i0 as u32;
            frac[i] = pos - i0;
        }
        let corners = 1usize << dims;
        let table_size = self.config.table_size();
        let mut out = CellLookup {
            slots: [0; MAX_CORNERS],
            weights: [0.0; MAX_CORNERS],
            dweights: [[0.0; MAX_DIMS]; MAX_CORNERS],
            corners,
        };
        let mut vertex = [0u32; MAX_DIMS];
        for corner in 0..corners {
            let mut w = 1.0;
            for i in 0..dims {
                let hi = (corner >> i) & 1 == 1;
                vertex[i] = base[i] + hi as u32;
                w *= if hi { frac[i] } else { 1.0 - frac[i] };
            }
            for j in 0..dims {
                if !live[j] {
                    continue;
                }
                let mut dw = if (corner >> j) & 1 == 1 { scale } else { -scale };
                for i in (0..dims).filter(|&i| i != j) {
                    dw *= if (corner >> i) & 1 == 1 { frac[i] } else { 1.0 - frac[i] };
                }
                out.dweights[corner][j] = dw;
            }
            out.slots[corner] = hash_index(&vertex[..dims], table_size);
            out.weights[corner] = w;
        }
        out
    }

    /// Writes the `L·F` encoding of `x` into `out`.
    pub fn encode_into(&self, x: &[f64], out: &mut [f64]) {
        let f = self.config.features_per_level;
        let t = self.config.table_size();
        debug_assert_eq!(x.len(), self.config.dims);
        debug_assert_eq!(out.len(), self.output_dim());
        for level in 0..self.config.levels {
            let cell = self.lookup(x, level);
            let dst = &mut out[level * f..(level + 1) * f];
            dst.fill(0.0);
            for c in 0..cell.corners {
                let row = (level * t + cell.slots[c]) * f;
                let w = cell.weights[c];
                for (d, v) in dst.iter_mut().zip(&self.tables[row..row + f]) {
                    *d += w * v;
                }
            }
        }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode_into(x, &mut out);
        out
    }

    /// Accumulates `∂/∂tables` of `⟨grad_out, encode(x)⟩` into `table_grad`
    /// (same layout as [`HashGrid::tables`]) and writes `∂/∂x` into `x_grad`.
    pub fn encode_backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        table_grad: &mut [f64],
        x_grad: &mut [f64],
    ) {
        let f = self.config.features_per_level;
        let t = self.config.table_size();
        let dims = self.config.dims;
        debug_assert_eq!(table_grad.len(), self.tables.len());
        x_grad[..dims].fill(0.0);
        for level in 0..self.config.levels {
            let cell = self.lookup(x, level);
            let g = &grad_out[level * f..(level + 1) * f];
            for c in 0..cell.corners {
                let row = (level * t + cell.slots[c]) * f;
                let w = cell.weights[c];
                let feat = &self.tables[row..row + f];
                let mut dot = 0.0;
                for k in 0..f {
                    table_grad[row + k] += w * g[k];
                    dot += feat[k] * g[k];
                }
                for j in 0..dims {
                    x_grad[j] += cell.dweights[c][j] * dot;
                }
            }
        }
    }

    /// Flat table rows (`level * T + slot`) read by `encode(x)`, in visit order.
    pub fn touched_rows(&self, x: &[f64]) -> Vec<usize> {
        let t = self.config.table_size();
        (0..self.config.levels)
            .flat_map(|level| {
                let cell = self.lookup(x, level);
                (0..cell.corners)
                    .map(move |c| level * t + cell.slots[c])
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

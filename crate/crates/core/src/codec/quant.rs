//! Scalar quantizers: learned 8-bit asymmetric Cholesky codes, half-precision
//! positions and post-hoc 8-bit affine codes for field tensors.

use half::f16;

/// Largest 8-bit code.
pub const MAX_CODE: f64 = 255.0;

/// Smallest step the quantizer will use; keeps γ strictly positive.
pub const MIN_GAMMA: f64 = 1e-12;

/// `floor(clamp((l − β) / γ, 0, 255))`.
pub fn quantize_cholesky(l: f64, gamma: f64, beta: f64) -> u8 {
    debug_assert!(gamma > 0.0);
    ((l - beta) / gamma).clamp(0.0, MAX_CODE).floor() as u8
}

pub fn dequantize_cholesky(code: u8, gamma: f64, beta: f64) -> f64 {
    code as f64 * gamma + beta
}

/// Straight-through gradients of `dequant(quant(l))` with respect to
/// `(l, γ, β)`.
///
/// Inside the range the floor is treated as the identity for `l` while `γ`
/// gets the step-size gradient `q − u`. Clipped values pass nothing to `l`;
/// they pin to `β` (below) or `β + 255γ` (above).
pub fn cholesky_ste_grad(l: f64, gamma: f64, beta: f64) -> [f64; 3] {
    let u = (l - beta) / gamma;
    if u < 0.0 {
        [0.0, 0.0, 1.0]
    } else if u > MAX_CODE {
        [0.0, MAX_CODE, 1.0]
    } else {
        [1.0, u.floor() - u, 0.0]
    }
}

/// Per-channel step `γ_i` and offset `β_i` for the three Cholesky channels,
/// stored at 32-bit precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    pub gamma: [f32; 3],
    pub beta: [f32; 3],
}

impl QuantParams {
    /// `β = min`, `γ = (max − min) / 255` per channel, so nothing clips initially.
    pub fn from_range(chols: &[[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for c in chols {
            for i in 0..3 {
                lo[i] = lo[i].min(c[i]);
                hi[i] = hi[i].max(c[i]);
            }
        }
        let mut gamma = [1.0f32; 3];
        let mut beta = [0.0f32; 3];
        for i in 0..3 {
            if lo[i].is_finite() {
                beta[i] = lo[i] as f32;
                // widen by the f32 rounding of β so the maximum stays representable
                let span = hi[i] - beta[i] as f64;
                gamma[i] = ((span / MAX_CODE) as f32).max(MIN_GAMMA as f32);
                if (MAX_CODE * gamma[i] as f64) + (beta[i] as f64) < hi[i] {
                    gamma[i] = f32::from_bits(gamma[i].to_bits() + 1);
                }
            }
        }
        Self { gamma, beta }
    }

    pub fn is_valid(&self) -> bool {
        self.gamma.iter().all(|g| g.is_finite() && *g > 0.0) && self.beta.iter().all(|b| b.is_finite())
    }

    pub fn quantize(&self, chol: [f64; 3]) -> [u8; 3] {
        std::array::from_fn(|i| quantize_cholesky(chol[i], self.gamma[i] as f64, self.beta[i] as f64))
    }

    pub fn dequantize(&self, codes: [u8; 3]) -> [f64; 3] {
        std::array::from_fn(|i| dequantize_cholesky(codes[i], self.gamma[i] as f64, self.beta[i] as f64))
    }
}

/// Binary16 round-to-nearest-even, returned as `f64`.
pub fn round_f16(v: f64) -> f64 {
    f16::from_f64(v).to_f64()
}

/// One field tensor as 8-bit codes: `value = code · scale + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub scale: f32,
    pub offset: f32,
    pub codes: Vec<u8>,
}

impl QuantizedTensor {
    /// Min/max affine quantization with round-to-nearest codes. A constant
    /// tensor gets scale 0 and is reproduced exactly.
    pub fn quantize(values: &[f64]) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || hi <= lo {
            let offset = if lo.is_finite() { lo as f32 } else { 0.0 };
            return Self {
                scale: 0.0,
                offset,
                codes: vec![0; values.len()],
            };
        }
        let offset = lo as f32;
        let scale = ((hi - offset as f64) / MAX_CODE) as f32;
        let (s, o) = (scale as f64, offset as f64);
        let codes = values
            .iter()
            .map(|&v| ((v - o) / s).round().clamp(0.0, MAX_CODE) as u8)
            .collect();
        Self {
            scale,
            offset,
            codes,
        }
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let (s, o) = (self.scale as f64, self.offset as f64);
        self.codes.iter().map(|&c| c as f64 * s + o).collect()
    }
}

//! 2D Gaussian primitives and the additive splatting rasterizer.
//!
//! A Gaussian lives in normalized image coordinates: `mu` in `[0,1]^2` and a
//! lower-triangular factor `L = [[l1, 0], [l2, l3]]` of the covariance
//! `Σ = L Lᵀ`, also in normalized units. A pixel at continuous pixel
//! coordinate `p` sees the displacement `d = (p.x / W - mu.x, p.y / H - mu.y)`
//! and the weight `exp(-½ dᵀ Σ⁻¹ d)`. Pixel colors are plain weighted sums
//! (no opacity, no depth order), so the representation can be rendered at any
//! output resolution.

mod raster;
mod reference;

pub use raster::{render, render_backward, Footprint};
pub use reference::render_reference;

pub use crate::image::Image;

/// Added to the absolute value of each stored diagonal entry of the
/// Cholesky factor.
pub const CHOL_EPS: f64 = 1e-4;

/// A Gaussian contributes to a pixel iff `σ ≤ CUTOFF_SIGMA`.
pub const CUTOFF_SIGMA: f64 = 16.0;

/// Side length of a raster tile in pixels.
pub const TILE_SIZE: usize = 16;

/// Number of scalar parameters per Gaussian (2 position, 3 factor, 3 color).
pub const PARAMS_PER_GAUSSIAN: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Gaussian2D {
    pub mu: [f64; 2],
    pub chol: [f64; 3],
    pub color: [f64; 3],
}

impl Gaussian2D {
    pub fn new(mu: [f64; 2], chol: [f64; 3], color: [f64; 3]) -> Self {
        Self { mu, chol, color }
    }

    pub fn to_array(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let [mx, my] = self.mu;
        let [l1, l2, l3] = self.chol;
        let [r, g, b] = self.color;
        [mx, my, l1, l2, l3, r, g, b]
    }

    pub fn from_array(p: &[f64]) -> Self {
        Self {
            mu: [p[0], p[1]],
            chol: [p[2], p[3], p[4]],
            color: [p[5], p[6], p[7]],
        }
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        covariance_from_cholesky(self.chol)
    }
}

/// Gradient of a scalar loss with respect to one Gaussian's parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub mu: [f64; 2],
    pub chol: [f64; 3],
    pub color: [f64; 3],
}

impl GaussianGrad {
    pub fn to_array(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        Gaussian2D::new(self.mu, self.chol, self.color).to_array()
    }

    pub fn from_array(p: &[f64]) -> Self {
        let g = Gaussian2D::from_array(p);
        Self {
            mu: g.mu,
            chol: g.chol,
            color: g.color,
        }
    }

    pub(crate) fn add_array(&mut self, p: &[f64; PARAMS_PER_GAUSSIAN]) {
        self.mu[0] += p[0];
        self.mu[1] += p[1];
        for i in 0..3 {
            self.chol[i] += p[2 + i];
            self.color[i] += p[5 + i];
        }
    }
}

/// Ordered Gaussians plus the canonical raster size they were fitted at.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian2D>,
    pub width: usize,
    pub height: usize,
}

impl GaussianSet {
    pub fn new(gaussians: Vec<Gaussian2D>, width: usize, height: usize) -> Self {
        Self {
            gaussians,
            width,
            height,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Flattens all parameters, `PARAMS_PER_GAUSSIAN` per Gaussian, in index order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.gaussians.iter().flat_map(|g| g.to_array()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len() * PARAMS_PER_GAUSSIAN);
        for (g, p) in self
            .gaussians
            .iter_mut()
            .zip(flat.chunks_exact(PARAMS_PER_GAUSSIAN))
        {
            *g = Gaussian2D::from_array(p);
        }
    }

    pub fn clamp_positions_in_place(&mut self) {
        for g in &mut self.gaussians {
            g.mu = g.mu.map(|v| v.clamp(0.0, 1.0));
        }
    }

    /// Copy with positions clamped to `[0,1]`, the form handed to the rasterizer.
    pub fn with_clamped_positions(&self) -> GaussianSet {
        let mut out = self.clone();
        out.clamp_positions_in_place();
        out
    }

    pub fn render(&self, width: usize, height: usize) -> Image {
        render(self, width, height)
    }
}

/// Zeroes position gradients for coordinates that the `[0,1]` clamp pinned.
pub fn mask_clamped_position_grads(unclamped: &GaussianSet, grads: &mut [GaussianGrad]) {
    for (g, d) in unclamped.gaussians.iter().zip(grads.iter_mut()) {
        for k in 0..2 {
            if !(0.0..=1.0).contains(&g.mu[k]) {
                d.mu[k] = 0.0;
            }
        }
    }
}

/// Flattens per-Gaussian gradients in the same layout as [`GaussianSet::to_flat`].
pub fn flatten_grads(grads: &[GaussianGrad]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.to_array()).collect()
}

/// Effective factor entries `(l1', l2, l3')` with `l1' = |l1| + ε`, `l3' = |l3| + ε`.
#[inline]
pub fn effective_cholesky(chol: [f64; 3]) -> [f64; 3] {
    [chol[0].abs() + CHOL_EPS, chol[1], chol[2].abs() + CHOL_EPS]
}

/// `Σ = L Lᵀ` for the positivity-reparameterized factor.
pub fn covariance_from_cholesky(chol: [f64; 3]) -> [[f64; 2]; 2] {
    let [a, b, c] = effective_cholesky(chol);
    [[a * a, a * b], [a * b, b * b + c * c]]
}

/// Weight `exp(-σ)` of `g` at continuous pixel coordinate `pixel` on a
/// `width`x`height` raster. No cutoff is applied.
pub fn eval_gaussian(g: &Gaussian2D, pixel: [f64; 2], width: usize, height: usize) -> f64 {
    let d = [
        pixel[0] / width as f64 - g.mu[0],
        pixel[1] / height as f64 - g.mu[1],
    ];
    (-quadratic_form(effective_cholesky(g.chol), d)).exp()
}

/// `σ = ½ |L⁻¹ d|²` by forward substitution on the triangular factor.
#[inline]
pub(crate) fn quadratic_form(factor: [f64; 3], d: [f64; 2]) -> f64 {
    let [a, b, c] = factor;
    let z1 = d[0] / a;
    let z2 = (d[1] - b * z1) / c;
    0.5 * (z1 * z1 + z2 * z2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn covariance_identity_and_diagonal() {
        let s = covariance_from_cholesky([1.0, 0.0, 1.0]);
        assert!(close(s[0][0], 1.0, 1e-3) && close(s[1][1], 1.0, 1e-3));
        assert_eq!(s[0][1], 0.0);
        let s = covariance_from_cholesky([2.0, 0.0, 3.0]);
        assert!(close(s[0][0], 4.0, 1e-3) && close(s[1][1], 9.0, 1e-3));
        assert_eq!(s[1][0], 0.0);
    }

    #[test]
    fn covariance_off_diagonal_by_hand() {
        // [[1,0],[1,1]] [[1,1],[0,1]] = [[1,1],[1,2]], up to the ε shift on the diagonal
        let s = covariance_from_cholesky([1.0, 1.0, 1.0]);
        let expected = [[1.0, 1.0], [1.0, 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(s[i][j], expected[i][j], 1e-3), "{s:?}");
            }
        }
        assert_eq!(s[0][1], s[1][0]);
    }

    #[test]
    fn covariance_is_psd_for_negative_inputs() {
        let s = covariance_from_cholesky([-0.3, 5.0, -0.0]);
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        assert!(det > 0.0);
    }

    #[test]
    fn eval_at_center_is_one() {
        let g = Gaussian2D::new([0.25, 0.75], [0.1, 0.02, 0.2], [1.0, 0.0, 0.0]);
        assert_eq!(eval_gaussian(&g, [8.0, 24.0], 32, 32), 1.0);
    }

    #[test]
    fn eval_matches_quadratic_form() {
        // Σ ≈ I in normalized units; displacement of one unit along x gives σ = ½.
        let g = Gaussian2D::new([0.0, 0.0], [1.0 - CHOL_EPS, 0.0, 1.0 - CHOL_EPS], [1.0; 3]);
        let w = eval_gaussian(&g, [10.0, 0.0], 10, 10);
        assert!(close(w, (-0.5f64).exp(), 1e-12));
        // |d| = 4 gives σ = 8
        let w = eval_gaussian(&g, [0.0, 40.0], 10, 10);
        assert!(close(w, (-8.0f64).exp(), 1e-15));
        assert!(close(w, 3.35e-4, 1e-6));
    }

    #[test]
    fn flat_round_trip() {
        let set = GaussianSet::new(
            vec![
                Gaussian2D::new([0.1, 0.2], [0.3, 0.4, 0.5], [0.6, 0.7, 0.8]),
                Gaussian2D::new([0.9, 1.0], [1.1, 1.2, 1.3], [1.4, 1.5, 1.6]),
            ],
            4,
            4,
        );
        let mut other = set.clone();
        other.gaussians.iter_mut().for_each(|g| *g = Gaussian2D::default());
        other.assign_flat(&set.to_flat());
        assert_eq!(other, set);
    }
}

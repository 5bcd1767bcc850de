//! Tiled forward and backward rasterization.
//!
//! Each Gaussian gets a conservative pixel bounding box of the `σ ≤ 16`
//! ellipse; the raster is cut into `TILE_SIZE` square tiles and every tile
//! keeps the (index-ordered) list of Gaussians whose box touches it. Tiles are
//! processed independently; the backward pass reduces the per-tile partial
//! gradients in tile order so results do not depend on scheduling.

use rayon::prelude::*;

use super::{
    effective_cholesky, GaussianGrad, GaussianSet, Image, CUTOFF_SIGMA, PARAMS_PER_GAUSSIAN,
    TILE_SIZE,
};

/// Per-Gaussian data precomputed for one output resolution.
#[derive(Clone, Copy, Debug)]
pub struct Footprint {
    pub factor: [f64; 3],
    pub mu: [f64; 2],
    /// Inclusive-exclusive pixel ranges `[x0, x1) x [y0, y1)`.
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl Footprint {
    /// Returns `None` when the influence region misses the raster entirely.
    pub fn new(mu: [f64; 2], chol: [f64; 3], width: usize, height: usize) -> Option<Self> {
        let factor = effective_cholesky(chol);
        let [a, b, c] = factor;
        if !(mu[0].is_finite() && mu[1].is_finite() && a.is_finite() && b.is_finite() && c.is_finite()) {
            return None;
        }
        // Extent of {d : ½ dᵀΣ⁻¹d ≤ k} along each axis is sqrt(2kΣ_ii).
        let reach = (2.0 * CUTOFF_SIGMA).sqrt();
        let rx = reach * a * width as f64;
        let ry = reach * (b * b + c * c).sqrt() * height as f64;
        // Pixel x has its center at (x + 0.5); one extra pixel of slack on each side.
        let cx = mu[0] * width as f64 - 0.5;
        let cy = mu[1] * height as f64 - 0.5;
        let range = |center: f64, radius: f64, limit: usize| -> Option<(usize, usize)> {
            let lo = (center - radius - 1.0).floor();
            let hi = (center + radius + 1.0).ceil() + 1.0;
            if hi <= 0.0 || lo >= limit as f64 {
                return None;
            }
            let lo = lo.max(0.0) as usize;
            let hi = (hi.min(limit as f64)) as usize;
            (lo < hi).then_some((lo, hi))
        };
        let (x0, x1) = range(cx, rx, width)?;
        let (y0, y1) = range(cy, ry, height)?;
        Some(Self {
            factor,
            mu,
            x0,
            x1,
            y0,
            y1,
        })
    }
}

struct TileGrid {
    width: usize,
    height: usize,
    tiles_x: usize,
    tiles_y: usize,
    footprints: Vec<Option<Footprint>>,
    /// Gaussian indices per tile, ascending.
    lists: Vec<Vec<u32>>,
}

impl TileGrid {
    fn build(set: &GaussianSet, width: usize, height: usize) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let footprints: Vec<_> = set
            .gaussians
            .iter()
            .map(|g| Footprint::new(g.mu, g.chol, width, height))
            .collect();
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (i, fp) in footprints.iter().enumerate() {
            let Some(fp) = fp else { continue };
            for ty in fp.y0 / TILE_SIZE..=(fp.y1 - 1) / TILE_SIZE {
                for tx in fp.x0 / TILE_SIZE..=(fp.x1 - 1) / TILE_SIZE {
                    lists[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        Self {
            width,
            height,
            tiles_x,
            tiles_y,
            footprints,
            lists,
        }
    }

    fn tile_bounds(&self, tile: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (
            x0,
            (x0 + TILE_SIZE).min(self.width),
            y0,
            (y0 + TILE_SIZE).min(self.height),
        )
    }

    fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }
}

#[inline]
fn displacement(fp: &Footprint, x: usize, y: usize, inv_w: f64, inv_h: f64) -> [f64; 2] {
    [
        (x as f64 + 0.5) * inv_w - fp.mu[0],
        (y as f64 + 0.5) * inv_h - fp.mu[1],
    ]
}

/// Renders `set` at `width`x`height`: each pixel is the sum of `c·exp(-σ)`
/// over the Gaussians with `σ ≤ CUTOFF_SIGMA` at its center. Output is not clamped.
pub fn render(set: &GaussianSet, width: usize, height: usize) -> Image {
    let mut out = Image::new(width, height);
    if width == 0 || height == 0 {
        return out;
    }
    let grid = TileGrid::build(set, width, height);
    let inv_w = 1.0 / width as f64;
    let inv_h = 1.0 / height as f64;

    let tiles: Vec<Vec<f64>> = (0..grid.tile_count())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = grid.tile_bounds(tile);
            let tw = x1 - x0;
            let mut buf = vec![0.0; tw * (y1 - y0) * 3];
            for &gi in &grid.lists[tile] {
                let fp = grid.footprints[gi as usize].as_ref().expect("binned footprint");
                let color = set.gaussians[gi as usize].color;
                let [a, b, c] = fp.factor;
                for y in fp.y0.max(y0)..fp.y1.min(y1) {
                    for x in fp.x0.max(x0)..fp.x1.min(x1) {
                        let d = displacement(fp, x, y, inv_w, inv_h);
                        let z1 = d[0] / a;
                        let z2 = (d[1] - b * z1) / c;
                        let sigma = 0.5 * (z1 * z1 + z2 * z2);
                        if sigma > CUTOFF_SIGMA {
                            continue;
                        }
                        let w = (-sigma).exp();
                        let o = ((y - y0) * tw + (x - x0)) * 3;
                        buf[o] += color[0] * w;
                        buf[o + 1] += color[1] * w;
                        buf[o + 2] += color[2] * w;
                    }
                }
            }
            buf
        })
        .collect();

    let data = out.data_mut();
    for (tile, buf) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = grid.tile_bounds(tile);
        let tw = x1 - x0;
        for y in y0..y1 {
            let src = &buf[(y - y0) * tw * 3..(y - y0 + 1) * tw * 3];
            data[(y * width + x0) * 3..(y * width + x1) * 3].copy_from_slice(src);
        }
    }
    out
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of `Σ_i ⟨grad_image_i, C_i⟩` with respect to every Gaussian
/// parameter, for the same cutoff forward as [`render`].
///
/// Panics if `grad_image` is not `width`x`height`.
pub fn render_backward(
    set: &GaussianSet,
    grad_image: &Image,
    width: usize,
    height: usize,
) -> Vec<GaussianGrad> {
    assert_eq!(
        (grad_image.width(), grad_image.height()),
        (width, height),
        "gradient image size mismatch"
    );
    let mut grads = vec![GaussianGrad::default(); set.len()];
    if width == 0 || height == 0 {
        return grads;
    }
    let grid = TileGrid::build(set, width, height);
    let inv_w = 1.0 / width as f64;
    let inv_h = 1.0 / height as f64;
    let gdata = grad_image.data();

    let partials: Vec<Vec<(u32, [f64; PARAMS_PER_GAUSSIAN])>> = (0..grid.tile_count())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = grid.tile_bounds(tile);
            let mut out = Vec::with_capacity(grid.lists[tile].len());
            for &gi in &grid.lists[tile] {
                let fp = grid.footprints[gi as usize].as_ref().expect("binned footprint");
                let color = set.gaussians[gi as usize].color;
                let [a, b, c] = fp.factor;
                // d_mu (2), d_a, d_b, d_c, d_color (3)
                let mut acc = [0.0f64; PARAMS_PER_GAUSSIAN];
                let mut touched = false;
                for y in fp.y0.max(y0)..fp.y1.min(y1) {
                    for x in fp.x0.max(x0)..fp.x1.min(x1) {
                        let d = displacement(fp, x, y, inv_w, inv_h);
                        let z1 = d[0] / a;
                        let z2 = (d[1] - b * z1) / c;
                        let sigma = 0.5 * (z1 * z1 + z2 * z2);
                        if sigma > CUTOFF_SIGMA {
                            continue;
                        }
                        let o = (y * width + x) * 3;
                        let g = [gdata[o], gdata[o + 1], gdata[o + 2]];
                        let w = (-sigma).exp();
                        acc[5] += w * g[0];
                        acc[6] += w * g[1];
                        acc[7] += w * g[2];
                        let dsigma = -w * (color[0] * g[0] + color[1] * g[1] + color[2] * g[2]);
                        if dsigma == 0.0 {
                            touched = true;
                            continue;
                        }
                        let gz2 = z2;
                        let gz1 = z1 - z2 * b / c;
                        acc[0] -= dsigma * gz1 / a;
                        acc[1] -= dsigma * gz2 / c;
                        acc[2] -= dsigma * gz1 * z1 / a;
                        acc[3] -= dsigma * gz2 * z1 / c;
                        acc[4] -= dsigma * gz2 * z2 / c;
                        touched = true;
                    }
                }
                if touched {
                    out.push((gi, acc));
                }
            }
            out
        })
        .collect();

    for tile in &partials {
        for (gi, acc) in tile {
            grads[*gi as usize].add_array(acc);
        }
    }
    for (g, d) in set.gaussians.iter().zip(grads.iter_mut()) {
        d.chol[0] *= sign(g.chol[0]);
        d.chol[2] *= sign(g.chol[2]);
    }
    grads
}

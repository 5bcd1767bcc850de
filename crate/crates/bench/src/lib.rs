//! Shared scene builders for the benchmarks in `benches/`.

use gsvideo_core::training::initial_gaussians;
use gsvideo_core::{GaussianSet, Image};

/// `count` Gaussians seeded over a mid-grey `width`x`height` frame.
pub fn scene(count: usize, width: usize, height: usize) -> GaussianSet {
    let key = Image::filled(width, height, [0.5, 0.4, 0.3]);
    initial_gaussians(&key, None, count, 7)
}

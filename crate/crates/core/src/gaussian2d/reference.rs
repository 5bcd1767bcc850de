use super::{covariance_from_cholesky, GaussianSet, Image};

/// Brute-force renderer: every Gaussian is evaluated at every pixel center
/// through the explicit inverse covariance, with no cutoff and no tiling.
/// Serves as the oracle for [`super::render`].
pub fn render_reference(set: &GaussianSet, width: usize, height: usize) -> Image {
    let mut out = Image::new(width, height);
    let inv: Vec<[f64; 3]> = set
        .gaussians
        .iter()
        .map(|g| {
            let s = covariance_from_cholesky(g.chol);
            let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
            [s[1][1] / det, -s[0][1] / det, s[0][0] / det]
        })
        .collect();
    for y in 0..height {
        for x in 0..width {
            let px = (x as f64 + 0.5) / width as f64;
            let py = (y as f64 + 0.5) / height as f64;
            let mut acc = [0.0f64; 3];
            for (g, m) in set.gaussians.iter().zip(&inv) {
                let dx = px - g.mu[0];
                let dy = py - g.mu[1];
                let sigma = 0.5 * (m[0] * dx * dx + 2.0 * m[1] * dx * dy + m[2] * dy * dy);
                let w = (-sigma).exp();
                for c in 0..3 {
                    acc[c] += g.color[c] * w;
                }
            }
            out.set_pixel(x, y, acc);
        }
    }
    out
}

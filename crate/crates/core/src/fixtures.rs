//! Seeded synthetic clips for tests and demos.

use std::f64::consts::TAU;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ConfigError;
use crate::image::{Image, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    /// (a) textured square translating over a static background.
    MovingSquare,
    /// (b) the whole frame pans across a texture.
    GlobalPan,
    /// (c) every frame identical.
    Static,
    /// Low-frequency content drifting slowly; used for resampling checks.
    Smooth,
}

impl FromStr for FixtureKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "a" | "square" => Ok(FixtureKind::MovingSquare),
            "b" | "pan" => Ok(FixtureKind::GlobalPan),
            "c" | "static" => Ok(FixtureKind::Static),
            "smooth" => Ok(FixtureKind::Smooth),
            other => Err(ConfigError::Invalid(format!(
                "unknown fixture {other:?} (expected a, b, c or smooth)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixtureConfig {
    pub kind: FixtureKind,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
}

impl FixtureConfig {
    /// 32x32, 8 frames.
    pub fn desk(kind: FixtureKind, seed: u64) -> Self {
        Self {
            kind,
            width: 32,
            height: 32,
            frames: 8,
            seed,
        }
    }
}

/// Smooth two-tone background: a gradient plus a long-period ripple.
#[derive(Clone, Copy, Debug)]
struct Backdrop {
    base: [f64; 3],
    tilt: [f64; 3],
    ripple: [f64; 3],
    freq: [f64; 2],
    phase: f64,
}

impl Backdrop {
    fn sample<R: Rng>(rng: &mut R, max_freq: f64) -> Self {
        let mut c = || [0.0; 3].map(|_: f64| rng.gen_range(0.25..0.55));
        let base = c();
        let tilt = c().map(|v| v - 0.4);
        let ripple = c().map(|v| (v - 0.2) * 0.5);
        Self {
            base,
            tilt,
            ripple,
            freq: [rng.gen_range(0.5..max_freq), rng.gen_range(0.5..max_freq)],
            phase: rng.gen_range(0.0..TAU),
        }
    }

    /// `u, v` in frame-normalized units.
    fn at(&self, u: f64, v: f64) -> [f64; 3] {
        let wave = (TAU * (self.freq[0] * u + self.freq[1] * v) + self.phase).sin();
        std::array::from_fn(|c| {
            (self.base[c] + self.tilt[c] * (u - v) * 0.5 + self.ripple[c] * wave).clamp(0.0, 1.0)
        })
    }
}

/// Geometry of the moving square in fixture (a): side length, top-left
/// corner per frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SquareTrack {
    pub side: usize,
    pub corners: Vec<(usize, usize)>,
}

impl SquareTrack {
    pub fn new(cfg: &FixtureConfig) -> Self {
        let side = (cfg.width.min(cfg.height) / 3).max(1);
        let (x0, y0) = (cfg.width / 6, cfg.height / 6);
        let travel_x = (cfg.width - side - x0 - cfg.width / 8) as f64;
        let travel_y = travel_x * 0.5;
        let denom = cfg.frames.saturating_sub(1).max(1) as f64;
        let corners = (0..cfg.frames)
            .map(|k| {
                let f = k as f64 / denom;
                (
                    x0 + (travel_x * f).round() as usize,
                    y0 + (travel_y * f).round() as usize,
                )
            })
            .collect();
        Self { side, corners }
    }

    /// Bounding box `(x0, y0, x1, y1)` (exclusive end) covering every frame's square.
    pub fn sweep_region(&self) -> (usize, usize, usize, usize) {
        let x0 = self.corners.iter().map(|c| c.0).min().unwrap_or(0);
        let y0 = self.corners.iter().map(|c| c.1).min().unwrap_or(0);
        let x1 = self.corners.iter().map(|c| c.0).max().unwrap_or(0) + self.side;
        let y1 = self.corners.iter().map(|c| c.1).max().unwrap_or(0) + self.side;
        (x0, y0, x1, y1)
    }
}

pub fn generate(cfg: &FixtureConfig) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width, cfg.height);
    let norm = |x: usize, y: usize| ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
    match cfg.kind {
        FixtureKind::MovingSquare => {
            let backdrop = Backdrop::sample(&mut rng, 1.5);
            let track = SquareTrack::new(cfg);
            let inner = [0.0; 3].map(|_: f64| rng.gen_range(0.7..0.95));
            let outer = [0.0; 3].map(|_: f64| rng.gen_range(0.05..0.3));
            let phase = rng.gen_range(0.0..TAU);
            let period = (track.side as f64 / 2.0).max(2.0);
            (0..cfg.frames)
                .map(|k| {
                    let mut img = Image::new(w, h);
                    let (cx, cy) = track.corners[k];
                    for y in 0..h {
                        for x in 0..w {
                            let (u, v) = norm(x, y);
                            let inside = (cx..cx + track.side).contains(&x)
                                && (cy..cy + track.side).contains(&y);
                            let rgb = if inside {
                                // texture moves with the square
                                let (sx, sy) = ((x - cx) as f64, (y - cy) as f64);
                                let s = 0.5
                                    + 0.5 * (TAU * (sx + 0.5 * sy) / period + phase).sin();
                                std::array::from_fn(|c| outer[c] + (inner[c] - outer[c]) * s)
                            } else {
                                backdrop.at(u, v)
                            };
                            img.set_pixel(x, y, rgb);
                        }
                    }
                    img
                })
                .collect()
        }
        FixtureKind::GlobalPan => {
            let backdrop = Backdrop::sample(&mut rng, 2.0);
            let detail = Backdrop::sample(&mut rng, 3.0);
            let speed = [rng.gen_range(0.6..1.0), rng.gen_range(0.2..0.5)];
            (0..cfg.frames)
                .map(|k| {
                    let mut img = Image::new(w, h);
                    for y in 0..h {
                        for x in 0..w {
                            let u = (x as f64 + 0.5 + speed[0] * k as f64) / w as f64;
                            let v = (y as f64 + 0.5 + speed[1] * k as f64) / h as f64;
                            let a = backdrop.at(u, v);
                            let b = detail.at(u, v);
                            img.set_pixel(x, y, std::array::from_fn(|c| 0.7 * a[c] + 0.3 * b[c]));
                        }
                    }
                    img
                })
                .collect()
        }
        FixtureKind::Static => {
            let backdrop = Backdrop::sample(&mut rng, 2.0);
            let blob = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
            let tint = [0.0; 3].map(|_: f64| rng.gen_range(0.6..0.9));
            let mut img = Image::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = norm(x, y);
                    let d2 = (u - blob[0]).powi(2) + (v - blob[1]).powi(2);
                    let a = (-d2 / 0.02).exp();
                    let b = backdrop.at(u, v);
                    img.set_pixel(x, y, std::array::from_fn(|c| b[c] * (1.0 - a) + tint[c] * a));
                }
            }
            vec![img; cfg.frames]
        }
        FixtureKind::Smooth => {
            let backdrop = Backdrop::sample(&mut rng, 1.0);
            let drift = rng.gen_range(0.005..0.01);
            (0..cfg.frames)
                .map(|k| {
                    let mut img = Image::new(w, h);
                    for y in 0..h {
                        for x in 0..w {
                            let (u, v) = norm(x, y);
                            img.set_pixel(x, y, backdrop.at(u + drift * k as f64, v));
                        }
                    }
                    img
                })
                .collect()
        }
    }
}

/// `count` random `size x size` holes per frame.
pub fn random_masks(
    width: usize,
    height: usize,
    frames: usize,
    count: usize,
    size: usize,
    seed: u64,
) -> Vec<Mask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|_| {
            let mut m = Mask::new(width, height);
            for _ in 0..count {
                let x = rng.gen_range(0..=width.saturating_sub(size));
                let y = rng.gen_range(0..=height.saturating_sub(size));
                m.mask_rect(x, y, size, size);
            }
            m
        })
        .collect()
}

/// Copy of `frame` with masked pixels set to black.
pub fn apply_mask(frame: &Image, mask: &Mask) -> Image {
    let mut out = frame.clone();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            if mask.is_masked(x, y) {
                out.set_pixel(x, y, [0.0; 3]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_fixture() {
        for kind in [
            FixtureKind::MovingSquare,
            FixtureKind::GlobalPan,
            FixtureKind::Static,
            FixtureKind::Smooth,
        ] {
            let cfg = FixtureConfig::desk(kind, 7);
            assert_eq!(generate(&cfg), generate(&cfg));
            let other = generate(&FixtureConfig { seed: 8, ..cfg });
            assert_ne!(generate(&cfg), other);
        }
    }

    #[test]
    fn static_fixture_has_no_motion() {
        let frames = generate(&FixtureConfig::desk(FixtureKind::Static, 1));
        assert!(frames.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn square_changes_stay_in_sweep_region() {
        let cfg = FixtureConfig::desk(FixtureKind::MovingSquare, 3);
        let frames = generate(&cfg);
        let (x0, y0, x1, y1) = SquareTrack::new(&cfg).sweep_region();
        let mut moved = false;
        for f in &frames[1..] {
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    if f.pixel(x, y) != frames[0].pixel(x, y) {
                        moved = true;
                        assert!((x0..x1).contains(&x) && (y0..y1).contains(&y));
                    }
                }
            }
        }
        assert!(moved);
    }

    #[test]
    fn values_in_unit_range() {
        let frames = generate(&FixtureConfig::desk(FixtureKind::GlobalPan, 2));
        assert!(frames.iter().flat_map(|f| f.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn masks_have_requested_shape() {
        let masks = random_masks(32, 32, 4, 5, 6, 9);
        assert_eq!(masks.len(), 4);
        for m in &masks {
            assert!(m.count() >= 36 && m.count() <= 5 * 36);
        }
        assert_eq!(masks, random_masks(32, 32, 4, 5, 6, 9));
    }
}

//! Planar float images and loss masks.

use crate::error::ShapeError;

/// Row-major interleaved RGB image with unclamped `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    /// Wraps `data`, which must hold exactly `width * height * 3` samples.
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == width * height * 3).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<(), ShapeError> {
        if self.width == other.width && self.height == other.height {
            Ok(())
        } else {
            Err(ShapeError {
                left_width: self.width,
                left_height: self.height,
                right_width: other.width,
                right_height: other.height,
            })
        }
    }

    /// Averages non-overlapping `factor`x`factor` blocks. Trailing rows and
    /// columns that do not fill a block are dropped.
    pub fn downsample_box(&self, factor: usize) -> Image {
        assert!(factor >= 1);
        let w = self.width / factor;
        let h = self.height / factor;
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set_pixel(x, y, acc.map(|v| v * norm));
            }
        }
        out
    }

    /// Pixel-wise mean of equally sized images.
    pub fn mean_of(images: &[Image]) -> Option<Image> {
        let first = images.first()?;
        let mut out = Image::new(first.width, first.height);
        for img in images {
            img.check_same_shape(first).ok()?;
            for (o, v) in out.data.iter_mut().zip(&img.data) {
                *o += v;
            }
        }
        let n = images.len() as f64;
        out.data.iter_mut().for_each(|v| *v /= n);
        Some(out)
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-pixel loss mask: `true` marks a pixel excluded from the loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    masked: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            masked: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, masked: Vec<bool>) -> Option<Self> {
        (masked.len() == width * height).then_some(Self {
            width,
            height,
            masked,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_masked(&self, x: usize, y: usize) -> bool {
        self.masked[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, masked: bool) {
        self.masked[y * self.width + x] = masked;
    }

    /// Masks the axis-aligned rectangle, clipped to the image.
    pub fn mask_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                self.set(x, y, true);
            }
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.masked
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }
}

//! Frame I/O (PNG sequences and raw RGB24) and image metrics.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{MediaError, ShapeError};
use crate::image::{Image, Mask};

/// Where a frame sequence lives on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrameSource {
    /// Directory of PNG files, ordered by file name.
    PngDir(PathBuf),
    /// Concatenated 8-bit RGB frames without a header.
    Raw {
        path: PathBuf,
        width: usize,
        height: usize,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MediaError + '_ {
    move |source| MediaError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `[0, 1]` float to 8-bit: clamp, then round half away from zero.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_u8(v: u8) -> f64 {
    v as f64 / 255.0
}

pub fn image_from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Image {
    Image::from_data(width, height, bytes.iter().map(|&b| from_u8(b)).collect())
        .expect("byte count matches dimensions")
}

pub fn image_to_rgb8(img: &Image) -> Vec<u8> {
    img.data().iter().map(|&v| to_u8(v)).collect()
}

pub fn load_frames(source: &FrameSource) -> Result<Vec<Image>, MediaError> {
    match source {
        FrameSource::PngDir(dir) => load_png_dir(dir),
        FrameSource::Raw {
            path,
            width,
            height,
        } => load_raw(path, *width, *height),
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>, MediaError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_png(path: &Path) -> Result<Image, MediaError> {
    let img = image::open(path).map_err(|e| MediaError::BadImage {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    Ok(image_from_rgb8(
        rgb.width() as usize,
        rgb.height() as usize,
        rgb.as_raw(),
    ))
}

pub fn load_png_dir(dir: &Path) -> Result<Vec<Image>, MediaError> {
    let files = png_files(dir)?;
    if files.is_empty() {
        return Err(MediaError::Empty(dir.to_path_buf()));
    }
    let mut frames: Vec<Image> = Vec::with_capacity(files.len());
    for path in files {
        let img = load_png(&path)?;
        if let Some(first) = frames.first() {
            if first.check_same_shape(&img).is_err() {
                return Err(MediaError::DimensionMismatch {
                    path,
                    width: first.width(),
                    height: first.height(),
                    found_width: img.width(),
                    found_height: img.height(),
                });
            }
        }
        frames.push(img);
    }
    Ok(frames)
}

pub fn load_raw(path: &Path, width: usize, height: usize) -> Result<Vec<Image>, MediaError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let frame_bytes = width * height * 3;
    if frame_bytes == 0 || bytes.len() % frame_bytes != 0 {
        return Err(MediaError::RawLength {
            path: path.to_path_buf(),
            len: bytes.len(),
            frame_bytes,
            width,
            height,
        });
    }
    if bytes.is_empty() {
        return Err(MediaError::Empty(path.to_path_buf()));
    }
    Ok(bytes
        .chunks_exact(frame_bytes)
        .map(|c| image_from_rgb8(width, height, c))
        .collect())
}

pub fn save_png(img: &Image, path: &Path) -> Result<(), MediaError> {
    image::save_buffer(
        path,
        &image_to_rgb8(img),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| MediaError::BadImage {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes `frame_00000.png`, `frame_00001.png`, ... into `dir`, creating it if needed.
pub fn save_png_dir(frames: &[Image], dir: &Path) -> Result<(), MediaError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, f) in frames.iter().enumerate() {
        save_png(f, &dir.join(format!("frame_{i:05}.png")))?;
    }
    Ok(())
}

pub fn save_raw(frames: &[Image], path: &Path) -> Result<(), MediaError> {
    let bytes: Vec<u8> = frames.iter().flat_map(image_to_rgb8).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

/// Loads a mask image: pixels brighter than mid-gray are excluded from the loss.
pub fn load_mask(path: &Path) -> Result<Mask, MediaError> {
    let img = image::open(path).map_err(|e| MediaError::BadImage {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let luma = img.to_luma8();
    let bits = luma.as_raw().iter().map(|&v| v > 127).collect();
    Ok(Mask::from_bits(luma.width() as usize, luma.height() as usize, bits).expect("sizes agree"))
}

/// One mask per PNG in `dir`, ordered by file name.
pub fn load_mask_dir(dir: &Path) -> Result<Vec<Mask>, MediaError> {
    let files = png_files(dir)?;
    if files.is_empty() {
        return Err(MediaError::Empty(dir.to_path_buf()));
    }
    files.iter().map(|p| load_mask(p)).collect()
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<(), MediaError> {
    let bytes: Vec<u8> = mask.bits().iter().map(|&m| if m { 255 } else { 0 }).collect();
    image::save_buffer(
        path,
        &bytes,
        mask.width() as u32,
        mask.height() as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| MediaError::BadImage {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, ShapeError> {
    a.check_same_shape(b)?;
    let n = a.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n as f64)
}

/// `10 log10(1 / MSE)` for signals in `[0, 1]`; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, ShapeError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

/// Per-frame PSNR averaged over the sequence.
pub fn mean_psnr(a: &[Image], b: &[Image]) -> Result<f64, ShapeError> {
    assert_eq!(a.len(), b.len(), "sequence lengths differ");
    if a.is_empty() {
        return Ok(f64::INFINITY);
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        sum += psnr(x, y)?;
    }
    Ok(sum / a.len() as f64)
}

pub fn format_psnr(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else {
        format!("{p:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_values() {
        let a = Image::filled(4, 4, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(4, 4, [0.6; 3]);
        // MSE = 0.01
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::new(4, 5)).is_err());
        assert_eq!(format_psnr(f64::INFINITY), "inf");
        assert_eq!(format_psnr(20.0), "20.0000");
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(to_u8(-0.5), 0);
        assert_eq!(to_u8(1.7), 255);
        assert_eq!(to_u8(127.5 / 255.0), 128);
        assert_eq!(to_u8(0.5), 128);
        for v in 0..=255u8 {
            assert_eq!(to_u8(from_u8(v)), v);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(3, 2);
        img.set_pixel(1, 1, [1.0, 0.2, 0.0]);
        let frames = vec![img.clone(), Image::filled(3, 2, [0.4; 3])];
        save_png_dir(&frames, dir.path()).unwrap();
        let back = load_png_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[0].max_abs_diff(&frames[0]) <= 0.5 / 255.0 + 1e-12);
        assert!(back[1].max_abs_diff(&frames[1]) <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn raw_round_trip_and_length_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.rgb");
        let frames = vec![Image::filled(2, 2, [0.0, 0.5, 1.0]); 3];
        save_raw(&frames, &path).unwrap();
        assert_eq!(load_raw(&path, 2, 2).unwrap().len(), 3);
        assert!(matches!(load_raw(&path, 3, 3), Err(MediaError::RawLength { .. })));
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_png_dir(dir.path()), Err(MediaError::Empty(_))));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Mask::new(5, 4);
        m.mask_rect(1, 1, 2, 2);
        let p = dir.path().join("m.png");
        save_mask(&m, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }
}

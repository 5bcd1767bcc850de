use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the frame readers and writers.
#[derive(Debug, Error)]
pub enum MediaError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode image {path}: {message}")]
    BadImage { path: PathBuf, message: String },
    #[error("frame {path} is {found_width}x{found_height}, expected {width}x{height}")]
    DimensionMismatch {
        path: PathBuf,
        width: usize,
        height: usize,
        found_width: usize,
        found_height: usize,
    },
    #[error("raw file {path} has {len} bytes, not a multiple of the frame size {frame_bytes} ({width}x{height}x3)")]
    RawLength {
        path: PathBuf,
        len: usize,
        frame_bytes: usize,
        width: usize,
        height: usize,
    },
    #[error("no frames found in {0}")]
    Empty(PathBuf),
}

/// Errors raised when two images (or an image and a mask) disagree in size.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("dimension mismatch: {left_width}x{left_height} vs {right_width}x{right_height}")]
pub struct ShapeError {
    pub left_width: usize,
    pub left_height: usize,
    pub right_width: usize,
    pub right_height: usize,
}

/// Invalid model or training configuration.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
}

/// Bitstream decoding failures. Every variant names the byte offset at which
/// the problem was detected.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { version: u16, offset: usize },
    #[error("stream truncated at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch for {section} ending at offset {offset}")]
    Checksum { section: &'static str, offset: usize },
    #[error("invalid {field} at offset {offset}: {message}")]
    InvalidField {
        field: &'static str,
        offset: usize,
        message: String,
    },
    #[error("{extra} trailing bytes after offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
}

/// Top-level error for pipeline operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("empty frame list")]
    NoFrames,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

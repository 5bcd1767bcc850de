//! Video representation with deformable 2D Gaussians.
//!
//! Each group of pictures holds a canonical set of 2D Gaussians and a
//! hash-encoded deformation field that moves and recolors them per frame.
//! The crate covers rasterization, the field, training, compression and the
//! `.gsv` bitstream.

pub mod codec;
pub mod deformation;
pub mod error;
pub mod fixtures;
pub mod gaussian2d;
pub mod hash_encoding;
pub mod image;
pub mod media_io;
pub mod optim;
pub mod training;

pub use deformation::{DeformationField, EncodingVariant, FieldConfig};
pub use error::{ConfigError, DecodeError, Error, MediaError, Result, ShapeError};
pub use gaussian2d::{render, Gaussian2D, GaussianSet};
pub use hash_encoding::{HashGrid, HashGridConfig};
pub use image::{Image, Mask};
pub use training::{GopModel, Profile, TrainConfig, VideoModel};

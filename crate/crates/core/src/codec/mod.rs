//! Compression: quantization-aware fine-tuning and the `.gsv` bitstream.

pub mod bitstream;
pub mod finetune;
pub mod quant;
pub mod rvq;

pub use bitstream::{
    bits_per_pixel, deserialize, read_header, serialize_float, serialize_quantized, Stream,
    StreamHeader,
};
pub use finetune::{
    compress_video, finetune_quantized, CodecConfig, CompressedVideo, QuantizedField, QuantizedGop,
};
pub use quant::{dequantize_cholesky, quantize_cholesky, QuantParams, QuantizedTensor};
pub use rvq::{commitment_loss, ema_update, kmeans_init, rvq_decode, rvq_encode, EmaState, RvqCodebooks};

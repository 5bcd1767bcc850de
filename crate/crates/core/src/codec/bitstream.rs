//! The `.gsv` container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   "GSVD" | version u16 | flags u8 | width u32 | height u32
//!          | frame_count u32 | gop_size u32
//!          | spatial grid | temporal grid | posenc K u8 | hidden u32
//!          | rvq stages u8 | rvq size u16
//!          | gop count u32 | { first u32 | frames u32 | gaussians u32 } per group
//!          | crc32 u32
//! grid     present u8 [ dims u8 | levels u8 | features u8 | log2 T u8
//!          | base resolution u32 | per-level scale f64 ]
//! group    payload | crc32 u32
//! ```
//!
//! A float payload stores every Gaussian as eight `f32` values followed by
//! every field tensor as `f32`. A quantized payload stores binary16
//! positions, `γ` and `β` as `f32`, 8-bit Cholesky codes, `f32` codebooks,
//! color indices (`u8` when `B + 1 ≤ 256`, otherwise `u16`) and the field
//! tensors as `scale f32 | offset f32 | u8 codes`.

use half::f16;

use super::finetune::{CompressedVideo, QuantizedField, QuantizedGop};
use super::quant::{QuantParams, QuantizedTensor};
use super::rvq::RvqCodebooks;
use crate::deformation::{DeformationField, FieldConfig};
use crate::error::DecodeError;
use crate::gaussian2d::{Gaussian2D, GaussianSet, PARAMS_PER_GAUSSIAN};
use crate::hash_encoding::HashGridConfig;
use crate::training::{GopModel, VideoModel};

pub const MAGIC: [u8; 4] = *b"GSVD";
pub const VERSION: u16 = 1;
const FLAG_QUANTIZED: u8 = 1;
/// Keeps every payload size computation far from `u64` overflow.
const MAX_HIDDEN_WIDTH: usize = 1 << 16;

/// A decoded stream in whichever form it was written.
#[derive(Clone, Debug, PartialEq)]
pub enum Stream {
    Float(VideoModel),
    Quantized(CompressedVideo),
}

impl Stream {
    pub fn to_model(&self) -> VideoModel {
        match self {
            Stream::Float(m) => m.clone(),
            Stream::Quantized(c) => c.to_model(),
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Stream::Quantized(_))
    }
}

/// `8 · bytes / (width · height · frames)`.
pub fn bits_per_pixel(bytes: usize, width: usize, height: usize, frames: usize) -> f64 {
    8.0 * bytes as f64 / (width * height * frames) as f64
}

/// Everything the header records; enough to size every payload.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamHeader {
    pub quantized: bool,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub gop_size: usize,
    pub field: FieldConfig,
    pub rvq_stages: usize,
    pub rvq_size: usize,
    /// `(first frame, frames, gaussians)` per group.
    pub gops: Vec<(usize, usize, usize)>,
}

fn field_tensor_lens(cfg: &FieldConfig) -> Vec<u64> {
    let mut out = Vec::new();
    for grid in [cfg.spatial, cfg.temporal].into_iter().flatten() {
        out.push(grid.levels as u64 * grid.table_size() as u64 * grid.features_per_level as u64);
    }
    let hidden = cfg.hidden_width as u64;
    for (i, o) in [
        (cfg.input_dim() as u64, hidden),
        (hidden, hidden),
        (hidden, 2),
        (hidden, 3),
    ] {
        out.push(i * o);
        out.push(o);
    }
    out
}

impl StreamHeader {
    fn index_bytes(&self) -> u64 {
        if self.rvq_size < 256 {
            1
        } else {
            2
        }
    }

    /// Payload bytes of group `gop` excluding its checksum.
    pub fn payload_size(&self, gop: usize) -> u64 {
        let n = self.gops[gop].2 as u64;
        let tensors = field_tensor_lens(&self.field);
        if self.quantized {
            let (m, b) = (self.rvq_stages as u64, self.rvq_size as u64);
            n * 4 + 24 + n * 3 + m * b * 12 + n * m * self.index_bytes()
                + tensors.iter().map(|l| 8 + l).sum::<u64>()
        } else {
            n * PARAMS_PER_GAUSSIAN as u64 * 4 + tensors.iter().map(|l| l * 4).sum::<u64>()
        }
    }

    pub fn header_size(&self) -> u64 {
        let grid = |g: &Option<HashGridConfig>| if g.is_some() { 17 } else { 1 };
        4 + 2 + 1 + 16 + grid(&self.field.spatial) + grid(&self.field.temporal) + 1 + 4 + 3 + 4
            + 12 * self.gops.len() as u64
            + 4
    }

    /// Total stream length implied by the header.
    pub fn stream_size(&self) -> u64 {
        self.header_size() + (0..self.gops.len()).map(|g| self.payload_size(g) + 4).sum::<u64>()
    }

    fn write(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(&MAGIC);
        put_u16(out, VERSION);
        out.push(if self.quantized { FLAG_QUANTIZED } else { 0 });
        for v in [self.width, self.height, self.frame_count, self.gop_size] {
            put_u32(out, v as u32);
        }
        for grid in [self.field.spatial, self.field.temporal] {
            match grid {
                None => out.push(0),
                Some(g) => {
                    out.push(1);
                    out.extend_from_slice(&[
                        g.dims as u8,
                        g.levels as u8,
                        g.features_per_level as u8,
                        g.log2_table_size as u8,
                    ]);
                    put_u32(out, g.base_resolution);
                    out.extend_from_slice(&g.per_level_scale.to_le_bytes());
                }
            }
        }
        out.push(self.field.posenc_freqs as u8);
        put_u32(out, self.field.hidden_width as u32);
        out.push(self.rvq_stages as u8);
        put_u16(out, self.rvq_size as u16);
        put_u32(out, self.gops.len() as u32);
        for &(first, len, n) in &self.gops {
            put_u32(out, first as u32);
            put_u32(out, len as u32);
            put_u32(out, n as u32);
        }
        let crc = crc32fast::hash(&out[start..]);
        put_u32(out, crc);
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn finish_section(out: &mut Vec<u8>, start: usize) {
    let crc = crc32fast::hash(&out[start..]);
    put_u32(out, crc);
}

/// Writes a float stream. Parameters are stored as `f32`; round the model
/// with [`VideoModel::round_to_f32`] first for a bit-exact round trip.
pub fn serialize_float(model: &VideoModel) -> Vec<u8> {
    let header = StreamHeader {
        quantized: false,
        width: model.width,
        height: model.height,
        frame_count: model.frame_count,
        gop_size: model.gop_size,
        field: model.field,
        rvq_stages: 0,
        rvq_size: 0,
        gops: model
            .gops
            .iter()
            .map(|g| (g.first_frame, g.num_frames, g.canonical.len()))
            .collect(),
    };
    let mut out = Vec::with_capacity(header.stream_size() as usize);
    header.write(&mut out);
    for gop in &model.gops {
        let start = out.len();
        for g in &gop.canonical.gaussians {
            for v in g.to_array() {
                put_f32(&mut out, v);
            }
        }
        for t in gop.field.tensors() {
            for &v in t {
                put_f32(&mut out, v);
            }
        }
        finish_section(&mut out, start);
    }
    out
}

pub fn serialize_quantized(video: &CompressedVideo) -> Vec<u8> {
    let header = StreamHeader {
        quantized: true,
        width: video.width,
        height: video.height,
        frame_count: video.frame_count,
        gop_size: video.gop_size,
        field: video.field,
        rvq_stages: video.rvq_stages,
        rvq_size: video.rvq_size,
        gops: video
            .gops
            .iter()
            .map(|g| (g.first_frame, g.num_frames, g.len()))
            .collect(),
    };
    let wide = header.index_bytes() == 2;
    let mut out = Vec::with_capacity(header.stream_size() as usize);
    header.write(&mut out);
    for gop in &video.gops {
        let start = out.len();
        for p in &gop.positions {
            put_u16(&mut out, p[0].to_bits());
            put_u16(&mut out, p[1].to_bits());
        }
        for v in gop.quant.gamma.iter().chain(&gop.quant.beta) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &gop.chol_codes {
            out.extend_from_slice(c);
        }
        for e in gop.codebooks.stages.iter().flatten() {
            for &v in e {
                put_f32(&mut out, v);
            }
        }
        for row in &gop.color_indices {
            for &k in row {
                if wide {
                    put_u16(&mut out, k);
                } else {
                    out.push(k as u8);
                }
            }
        }
        for t in &gop.field.tensors {
            out.extend_from_slice(&t.scale.to_le_bytes());
            out.extend_from_slice(&t.offset.to_le_bytes());
            out.extend_from_slice(&t.codes);
        }
        finish_section(&mut out, start);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32, DecodeError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn finite_f32(&mut self, field: &'static str) -> Result<f64, DecodeError> {
        let at = self.pos;
        let v = self.f32()?;
        if v.is_finite() {
            Ok(v as f64)
        } else {
            Err(invalid(field, at, format!("non-finite value {v}")))
        }
    }

    fn checksum(&mut self, start: usize, section: &'static str) -> Result<(), DecodeError> {
        let expect = crc32fast::hash(&self.bytes[start..self.pos]);
        let at = self.pos;
        if self.u32()? != expect {
            return Err(DecodeError::Checksum {
                section,
                offset: at,
            });
        }
        Ok(())
    }
}

fn invalid(field: &'static str, offset: usize, message: String) -> DecodeError {
    DecodeError::InvalidField {
        field,
        offset,
        message,
    }
}

fn read_grid(r: &mut Reader<'_>) -> Result<Option<HashGridConfig>, DecodeError> {
    let at = r.pos;
    match r.u8()? {
        0 => Ok(None),
        1 => {
            let dims = r.u8()? as usize;
            let levels = r.u8()? as usize;
            let features_per_level = r.u8()? as usize;
            let log2_table_size = r.u8()? as u32;
            let base_resolution = r.u32()?;
            let per_level_scale = r.f64()?;
            Ok(Some(HashGridConfig {
                dims,
                levels,
                features_per_level,
                log2_table_size,
                base_resolution,
                per_level_scale,
            }))
        }
        other => Err(invalid("grid presence flag", at, format!("expected 0 or 1, got {other}"))),
    }
}

/// Parses and validates the header; returns it with the offset of the first payload.
pub fn read_header(bytes: &[u8]) -> Result<(StreamHeader, usize), DecodeError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        if bytes.len() < 4 && MAGIC.starts_with(bytes) {
            return Err(DecodeError::Truncated {
                offset: bytes.len(),
                needed: 4 - bytes.len(),
            });
        }
        return Err(DecodeError::BadMagic);
    }
    r.pos = 4;
    let version = r.u16()?;
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion { version, offset: 4 });
    }
    let flags_at = r.pos;
    let flags = r.u8()?;
    let dims_at = r.pos;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let frame_count = r.u32()? as usize;
    let gop_size = r.u32()? as usize;
    let field_at = r.pos;
    let spatial = read_grid(&mut r)?;
    let temporal = read_grid(&mut r)?;
    let posenc_freqs = r.u8()? as usize;
    let hidden_width = r.u32()? as usize;
    let rvq_at = r.pos;
    let rvq_stages = r.u8()? as usize;
    let rvq_size = r.u16()? as usize;
    let count_at = r.pos;
    let gop_count = r.u32()? as usize;
    // each table row is 12 bytes; refuse counts the buffer cannot hold
    let table_bytes = gop_count as u64 * 12;
    if table_bytes > (bytes.len() - r.pos) as u64 {
        return Err(DecodeError::Truncated {
            offset: r.pos,
            needed: (table_bytes - (bytes.len() - r.pos) as u64) as usize,
        });
    }
    let table_at = r.pos;
    let mut gops = Vec::with_capacity(gop_count);
    for _ in 0..gop_count {
        gops.push((r.u32()? as usize, r.u32()? as usize, r.u32()? as usize));
    }
    r.checksum(0, "header")?;

    if flags & !FLAG_QUANTIZED != 0 {
        return Err(invalid("flags", flags_at, format!("unknown bits {flags:#04x}")));
    }
    let quantized = flags & FLAG_QUANTIZED != 0;
    if frame_count > 0 && (width == 0 || height == 0) {
        return Err(invalid("dimensions", dims_at, format!("{width}x{height}")));
    }
    if gop_size == 0 {
        return Err(invalid("gop size", dims_at + 12, "must be at least 1".into()));
    }
    let field = FieldConfig {
        spatial,
        temporal,
        posenc_freqs,
        hidden_width,
    };
    if spatial.is_some_and(|g| g.dims != 2) || temporal.is_some_and(|g| g.dims != 3) {
        return Err(invalid("field config", field_at, "wrong grid dimensionality".into()));
    }
    field
        .validate()
        .map_err(|e| invalid("field config", field_at, e.to_string()))?;
    if hidden_width > MAX_HIDDEN_WIDTH {
        return Err(invalid("field config", field_at, format!("hidden width {hidden_width}")));
    }
    if quantized && (rvq_stages == 0 || rvq_size == 0 || rvq_size == u16::MAX as usize) {
        return Err(invalid("rvq shape", rvq_at, format!("M={rvq_stages}, B={rvq_size}")));
    }
    if !quantized && (rvq_stages != 0 || rvq_size != 0) {
        return Err(invalid("rvq shape", rvq_at, "set on a float stream".into()));
    }
    let mut next = 0;
    for (i, &(first, len, _)) in gops.iter().enumerate() {
        if first != next || len == 0 || len > gop_size {
            return Err(invalid(
                "gop table",
                table_at + 12 * i,
                format!("group {i} covers {first}+{len}, expected start {next}"),
            ));
        }
        next += len;
    }
    if next != frame_count {
        return Err(invalid(
            "gop table",
            count_at,
            format!("groups cover {next} frames, header says {frame_count}"),
        ));
    }
    Ok((
        StreamHeader {
            quantized,
            width,
            height,
            frame_count,
            gop_size,
            field,
            rvq_stages,
            rvq_size,
            gops,
        },
        r.pos,
    ))
}

fn read_float_gop(
    r: &mut Reader<'_>,
    header: &StreamHeader,
    gop: usize,
) -> Result<GopModel, DecodeError> {
    let (first, len, n) = header.gops[gop];
    let mut gaussians = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        for v in &mut p {
            *v = r.finite_f32("gaussian parameter")?;
        }
        gaussians.push(Gaussian2D::from_array(&p));
    }
    let mut field = DeformationField::zeros(header.field).expect("validated config");
    for t in field.tensors_mut() {
        for v in t.iter_mut() {
            *v = r.finite_f32("field parameter")?;
        }
    }
    Ok(GopModel {
        canonical: GaussianSet::new(gaussians, header.width, header.height),
        field,
        first_frame: first,
        num_frames: len,
    })
}

fn read_quantized_gop(
    r: &mut Reader<'_>,
    header: &StreamHeader,
    gop: usize,
) -> Result<QuantizedGop, DecodeError> {
    let (first, len, n) = header.gops[gop];
    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos;
        let p = [f16::from_bits(r.u16()?), f16::from_bits(r.u16()?)];
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(invalid("position", at, "non-finite".into()));
        }
        positions.push(p);
    }
    let quant_at = r.pos;
    let mut q = [0f32; 6];
    for v in &mut q {
        *v = r.f32()?;
    }
    let quant = QuantParams {
        gamma: [q[0], q[1], q[2]],
        beta: [q[3], q[4], q[5]],
    };
    if !quant.is_valid() {
        return Err(invalid("cholesky quantizer", quant_at, format!("{quant:?}")));
    }
    let mut chol_codes = Vec::with_capacity(n);
    for _ in 0..n {
        let c = r.take(3)?;
        chol_codes.push([c[0], c[1], c[2]]);
    }
    let mut stages = Vec::with_capacity(header.rvq_stages);
    for _ in 0..header.rvq_stages {
        let mut book = Vec::with_capacity(header.rvq_size);
        for _ in 0..header.rvq_size {
            book.push([
                r.finite_f32("codebook entry")?,
                r.finite_f32("codebook entry")?,
                r.finite_f32("codebook entry")?,
            ]);
        }
        stages.push(book);
    }
    let wide = header.index_bytes() == 2;
    let mut color_indices = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(header.rvq_stages);
        for _ in 0..header.rvq_stages {
            let at = r.pos;
            let k = if wide { r.u16()? } else { r.u8()? as u16 };
            if k as usize > header.rvq_size {
                return Err(invalid("color index", at, format!("{k} exceeds {}", header.rvq_size)));
            }
            row.push(k);
        }
        color_indices.push(row);
    }
    let mut tensors = Vec::new();
    for len in field_tensor_lens(&header.field) {
        let at = r.pos;
        let scale = r.f32()?;
        let offset = r.f32()?;
        if !(scale.is_finite() && scale >= 0.0 && offset.is_finite()) {
            return Err(invalid("field quantizer", at, format!("scale {scale}, offset {offset}")));
        }
        let codes = r.take(len as usize)?.to_vec();
        tensors.push(QuantizedTensor {
            scale,
            offset,
            codes,
        });
    }
    Ok(QuantizedGop {
        first_frame: first,
        num_frames: len,
        positions,
        quant,
        chol_codes,
        codebooks: RvqCodebooks::new(stages),
        color_indices,
        field: QuantizedField {
            config: header.field,
            tensors,
        },
    })
}

pub fn deserialize(bytes: &[u8]) -> Result<Stream, DecodeError> {
    let (header, start) = read_header(bytes)?;
    // Size every payload before allocating anything for it.
    let expected = header.stream_size();
    if (bytes.len() as u64) < expected {
        return Err(DecodeError::Truncated {
            offset: bytes.len(),
            needed: (expected - bytes.len() as u64) as usize,
        });
    }
    let mut r = Reader { bytes, pos: start };
    let stream = if header.quantized {
        let mut gops = Vec::with_capacity(header.gops.len());
        for i in 0..header.gops.len() {
            let begin = r.pos;
            let gop = read_quantized_gop(&mut r, &header, i)?;
            r.checksum(begin, "group payload")?;
            gops.push(gop);
        }
        Stream::Quantized(CompressedVideo {
            width: header.width,
            height: header.height,
            frame_count: header.frame_count,
            gop_size: header.gop_size,
            field: header.field,
            rvq_stages: header.rvq_stages,
            rvq_size: header.rvq_size,
            gops,
        })
    } else {
        let mut gops = Vec::with_capacity(header.gops.len());
        for i in 0..header.gops.len() {
            let begin = r.pos;
            let gop = read_float_gop(&mut r, &header, i)?;
            r.checksum(begin, "group payload")?;
            gops.push(gop);
        }
        Stream::Float(VideoModel {
            width: header.width,
            height: header.height,
            frame_count: header.frame_count,
            gop_size: header.gop_size,
            field: header.field,
            gops,
        })
    };
    if r.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes {
            offset: r.pos,
            extra: bytes.len() - r.pos,
        });
    }
    Ok(stream)
}

//! `gsvideo` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use gsvideo_core::codec::{
    bits_per_pixel, compress_video, deserialize, read_header, serialize_float, serialize_quantized,
    CodecConfig, Stream,
};
use gsvideo_core::fixtures::{self, FixtureConfig, FixtureKind};
use gsvideo_core::media_io::{self, format_psnr, FrameSource};
use gsvideo_core::training::{train_video, Profile, TrainConfig, TrainEvent, VideoModel};
use gsvideo_core::{render, ConfigError, Error, Image, Mask};

#[derive(Debug, Parser)]
#[command(name = "gsvideo", version, about = "Deformable 2D Gaussian video encoder and decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per group of pictures and write a float `.gsv` stream.
    Encode(EncodeArgs),
    /// Render every frame of a `.gsv` stream.
    ///
    /// The reported decode_fps counts rendering only; reading the stream and
    /// writing images are excluded.
    Decode(DecodeArgs),
    /// Quantization-aware fine-tuning of a float stream; prints the
    /// rate-distortion table as CSV.
    Compress(CompressArgs),
    /// Generate a synthetic clip.
    Fixture(FixtureArgs),
    /// PSNR between two clips, or a summary of a `.gsv` stream.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameFormat {
    Png,
    Raw,
}

#[derive(Debug, Clone, Args)]
pub struct FrameArgs {
    /// Frame storage: a directory of PNG files or one raw RGB24 file.
    #[arg(long, value_enum, default_value = "png")]
    pub format: FrameFormat,
    /// Frame size for raw input, as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
}

impl FrameArgs {
    fn source(&self, path: &Path) -> anyhow::Result<FrameSource> {
        Ok(match self.format {
            FrameFormat::Png => FrameSource::PngDir(path.to_path_buf()),
            FrameFormat::Raw => {
                let Some((width, height)) = self.size else {
                    return Err(usage("raw frames need --size WIDTHxHEIGHT"));
                };
                FrameSource::Raw {
                    path: path.to_path_buf(),
                    width,
                    height,
                }
            }
        })
    }

    fn load(&self, path: &Path) -> anyhow::Result<Vec<Image>> {
        let source = self.source(path)?;
        media_io::load_frames(&source).with_context(|| format!("reading frames from {}", path.display()))
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Input frames.
    #[arg(long)]
    pub input: PathBuf,
    /// Output `.gsv` file.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub frames: FrameArgs,
    /// Configuration preset.
    #[arg(long, default_value = "tiny", value_parser = parse_profile)]
    pub profile: Profile,
    #[arg(long)]
    pub gop_size: Option<usize>,
    /// Gaussians per group.
    #[arg(long)]
    pub gaussians: Option<usize>,
    #[arg(long)]
    pub coarse_steps: Option<usize>,
    #[arg(long)]
    pub deform_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of mask PNGs, one per frame; white pixels are left out of the loss.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Groups trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Suppress progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Input `.gsv` file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory (PNG) or file (raw).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value = "png")]
    pub format: FrameFormat,
    /// Resolution multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Original frames; prints per-frame PSNR when given (native scale only).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_parser = parse_size)]
    pub reference_size: Option<(usize, usize)>,
    /// Render frames in parallel.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// Float `.gsv` stream produced by `encode`.
    #[arg(long)]
    pub input: PathBuf,
    /// Original frames used for fine-tuning.
    #[arg(long)]
    pub reference: PathBuf,
    #[command(flatten)]
    pub frames: FrameArgs,
    /// Output file. With several (M, B) points, each is written next to it
    /// as `<stem>_m<M>_b<B>.gsv`.
    #[arg(long)]
    pub output: PathBuf,
    /// RVQ stages M; comma-separated for several points.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub rvq_stages: Vec<usize>,
    /// Codebook size B; comma-separated, paired with --rvq-stages.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub rvq_size: Vec<usize>,
    /// Commitment loss weight.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Fine-tuning steps per group.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "tiny", value_parser = parse_profile)]
    pub profile: Profile,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// a = moving square, b = global pan, c = static, smooth = slow low-frequency drift.
    #[arg(long, default_value = "a", value_parser = parse_fixture)]
    pub kind: FixtureKind,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "png", value_enum)]
    pub format: FrameFormat,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write random hole masks to this directory.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub mask_count: usize,
    #[arg(long, default_value_t = 6)]
    pub mask_size: usize,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Frames to score, or a `.gsv` stream to summarize.
    #[arg(long)]
    pub input: PathBuf,
    /// Reference frames.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub frames: FrameArgs,
}

/// Marks an error as a command-line usage problem (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

/// 2 for bad arguments, 3 for unreadable or inconsistent data, 4 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<gsvideo_core::MediaError>()
            || cause.is::<gsvideo_core::DecodeError>()
            || cause.is::<gsvideo_core::ShapeError>()
            || cause.is::<std::io::Error>()
        {
            return EXIT_DATA;
        }
    }
    EXIT_INTERNAL
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let w: usize = w.parse().map_err(|e| format!("width: {e}"))?;
    let h: usize = h.parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((w, h))
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: ConfigError| e.to_string())
}

fn parse_fixture(s: &str) -> Result<FixtureKind, String> {
    s.parse().map_err(|e: ConfigError| e.to_string())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Encode(a) => cmd_encode(&a, &mut out),
        Command::Decode(a) => cmd_decode(&a, &mut out),
        Command::Compress(a) => cmd_compress(&a, &mut out),
        Command::Fixture(a) => cmd_fixture(&a, &mut out),
        Command::Metrics(a) => cmd_metrics(&a, &mut out),
    }
}

fn progress(quiet: bool) -> impl Fn(usize, &TrainEvent) + Sync {
    move |gop, e| {
        if !quiet {
            eprintln!("gop={gop} {e}");
        }
    }
}

fn render_video(model: &VideoModel, width: usize, height: usize, parallel: bool) -> Vec<Image> {
    let one = |k: usize| {
        let (gop, offset) = model.locate(k).expect("frame within the stream");
        render(&gop.deformed(offset), width, height)
    };
    if parallel {
        (0..model.frame_count).into_par_iter().map(one).collect()
    } else {
        (0..model.frame_count).map(one).collect()
    }
}

fn psnr_table(
    out: &mut dyn std::io::Write,
    decoded: &[Image],
    reference: &[Image],
) -> anyhow::Result<f64> {
    if decoded.len() != reference.len() {
        bail!(Error::from(ConfigError::Invalid(format!(
            "{} decoded frames vs {} reference frames",
            decoded.len(),
            reference.len()
        ))));
    }
    let mut sum = 0.0;
    for (k, (d, r)) in decoded.iter().zip(reference).enumerate() {
        let p = media_io::psnr(d, r).map_err(Error::from)?;
        sum += p;
        writeln!(out, "frame={k} psnr={}", format_psnr(p))?;
    }
    let mean = if decoded.is_empty() { f64::INFINITY } else { sum / decoded.len() as f64 };
    writeln!(out, "mean_psnr={}", format_psnr(mean))?;
    Ok(mean)
}

fn train_config(a: &EncodeArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = a.profile.config();
    cfg.seed = a.seed;
    if let Some(v) = a.gop_size {
        cfg.gop_size = v;
    }
    if let Some(v) = a.gaussians {
        cfg.num_gaussians = v;
    }
    if let Some(v) = a.coarse_steps {
        cfg.coarse_steps = v;
    }
    if let Some(v) = a.deform_steps {
        cfg.deform_steps = v;
    }
    if a.quiet {
        cfg.log_every = 0;
    }
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_encode(a: &EncodeArgs, out: &mut dyn std::io::Write) -> anyhow::Result<()> {
    let cfg = train_config(a)?;
    let frames = a.frames.load(&a.input)?;
    let masks: Option<Vec<Mask>> = match &a.mask {
        Some(dir) => {
            let m = media_io::load_mask_dir(dir)
                .with_context(|| format!("reading masks from {}", dir.display()))?;
            if m.len() != frames.len() {
                bail!(Error::from(ConfigError::Invalid(format!(
                    "{} masks for {} frames",
                    m.len(),
                    frames.len()
                ))));
            }
            Some(m)
        }
        None => None,
    };
    let started = Instant::now();
    let mut model = train_video(&frames, masks.as_deref(), &cfg, a.jobs, &progress(a.quiet))?;
    let train_secs = started.elapsed().as_secs_f64();
    // The stream stores f32; score exactly what a decoder will see.
    model.round_to_f32();
    let bytes = serialize_float(&model);
    std::fs::write(&a.output, &bytes).with_context(|| format!("writing {}", a.output.display()))?;
    let decoded = render_video(&model, model.width, model.height, false);
    psnr_table(out, &decoded, &frames)?;
    writeln!(
        out,
        "gops={} bytes={} bpp={:.4} train_seconds={:.1}",
        model.gops.len(),
        bytes.len(),
        bits_per_pixel(bytes.len(), model.width, model.height, model.frame_count),
        train_secs
    )?;
    Ok(())
}

fn read_stream(path: &Path) -> anyhow::Result<(Stream, usize)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let stream = deserialize(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    Ok((stream, bytes.len()))
}

/// Output size for `scale`: `round(dim · scale)`, at least one pixel.
pub fn scaled_dims(width: usize, height: usize, scale: f64) -> (usize, usize) {
    let s = |d: usize| ((d as f64 * scale).round() as usize).max(1);
    (s(width), s(height))
}

pub fn cmd_decode(a: &DecodeArgs, out: &mut dyn std::io::Write) -> anyhow::Result<()> {
    if !(a.scale.is_finite() && a.scale > 0.0) {
        return Err(usage(format!("--scale must be positive, got {}", a.scale)));
    }
    let (stream, _) = read_stream(&a.input)?;
    let model = stream.to_model();
    let (w, h) = scaled_dims(model.width, model.height, a.scale);
    let started = Instant::now();
    let frames = render_video(&model, w, h, a.parallel);
    let secs = started.elapsed().as_secs_f64();
    if let Some(path) = &a.output {
        match a.format {
            FrameFormat::Png => media_io::save_png_dir(&frames, path)?,
            FrameFormat::Raw => media_io::save_raw(&frames, path)?,
        }
    }
    if let Some(reference) = &a.reference {
        if (w, h) != (model.width, model.height) {
            return Err(usage("--reference needs native-scale decoding"));
        }
        let fa = FrameArgs {
            format: if a.reference_size.is_some() { FrameFormat::Raw } else { FrameFormat::Png },
            size: a.reference_size,
        };
        let reference = fa.load(reference)?;
        psnr_table(out, &frames, &reference)?;
    }
    let fps = if secs > 0.0 { frames.len() as f64 / secs } else { f64::INFINITY };
    writeln!(
        out,
        "frames={} width={w} height={h} quantized={} decode_fps={fps:.2}",
        frames.len(),
        stream.is_quantized()
    )?;
    Ok(())
}

fn point_path(output: &Path, m: usize, b: usize, several: bool) -> PathBuf {
    if !several {
        return output.to_path_buf();
    }
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("stream");
    output.with_file_name(format!("{stem}_m{m}_b{b}.gsv"))
}

pub fn cmd_compress(a: &CompressArgs, out: &mut dyn std::io::Write) -> anyhow::Result<()> {
    let (ns, nb) = (a.rvq_stages.len(), a.rvq_size.len());
    if ns != nb && ns != 1 && nb != 1 {
        return Err(usage("--rvq-stages and --rvq-size lists differ in length"));
    }
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let points: Vec<(usize, usize)> = {
        let n = a.rvq_stages.len().max(a.rvq_size.len());
        let pick = |v: &[usize], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        (0..n).map(|i| (pick(&a.rvq_stages, i), pick(&a.rvq_size, i))).collect()
    };
    let (stream, float_bytes) = read_stream(&a.input)?;
    let Stream::Float(model) = stream else {
        return Err(usage("input stream is already quantized"));
    };
    let frames = a.frames.load(&a.reference)?;
    let train = a.profile.config();
    let float_frames = render_video(&model, model.width, model.height, false);
    let float_psnr = media_io::mean_psnr(&float_frames, &frames).map_err(Error::from)?;

    let mut table = String::from("m,b,bytes,bpp,psnr\n");
    let bpp = |bytes| bits_per_pixel(bytes, model.width, model.height, model.frame_count);
    writeln!(table, "float,float,{float_bytes},{:.4},{}", bpp(float_bytes), format_psnr(float_psnr))?;
    for &(m, b) in &points {
        let mut codec = CodecConfig {
            rvq_stages: m,
            rvq_size: b,
            lambda: a.lambda,
            seed: a.seed,
            ..CodecConfig::default()
        };
        if let Some(s) = a.steps {
            codec.steps = s;
        }
        if a.quiet {
            codec.log_every = 0;
        }
        let compressed = compress_video(&model, &frames, &codec, &train, a.jobs, &progress(a.quiet))?;
        let bytes = serialize_quantized(&compressed);
        let path = point_path(&a.output, m, b, points.len() > 1);
        std::fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        let decoded = render_video(&compressed.to_model(), model.width, model.height, false);
        let p = media_io::mean_psnr(&decoded, &frames).map_err(Error::from)?;
        writeln!(table, "{m},{b},{},{:.4},{}", bytes.len(), bpp(bytes.len()), format_psnr(p))?;
    }
    out.write_all(table.as_bytes())?;
    Ok(())
}

pub fn cmd_fixture(a: &FixtureArgs, out: &mut dyn std::io::Write) -> anyhow::Result<()> {
    if a.width == 0 || a.height == 0 || a.frames == 0 {
        return Err(usage("fixture dimensions and frame count must be positive"));
    }
    let cfg = FixtureConfig {
        kind: a.kind,
        width: a.width,
        height: a.height,
        frames: a.frames,
        seed: a.seed,
    };
    let frames = fixtures::generate(&cfg);
    match a.format {
        FrameFormat::Png => media_io::save_png_dir(&frames, &a.output)?,
        FrameFormat::Raw => media_io::save_raw(&frames, &a.output)?,
    }
    if let Some(dir) = &a.masks {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let masks = fixtures::random_masks(a.width, a.height, a.frames, a.mask_count, a.mask_size, a.seed);
        for (k, m) in masks.iter().enumerate() {
            media_io::save_mask(m, &dir.join(format!("mask_{k:05}.png")))?;
        }
    }
    writeln!(out, "frames={} width={} height={}", a.frames, a.width, a.height)?;
    Ok(())
}

pub fn cmd_metrics(a: &MetricsArgs, out: &mut dyn std::io::Write) -> anyhow::Result<()> {
    if a.input.extension().is_some_and(|e| e == "gsv") {
        let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
        let (header, _) = read_header(&bytes).with_context(|| format!("decoding {}", a.input.display()))?;
        let gaussians: usize = header.gops.iter().map(|g| g.2).sum();
        writeln!(
            out,
            "quantized={} width={} height={} frames={} gops={} gaussians={gaussians} bytes={} bpp={:.4}",
            header.quantized,
            header.width,
            header.height,
            header.frame_count,
            header.gops.len(),
            bytes.len(),
            bits_per_pixel(bytes.len(), header.width, header.height, header.frame_count.max(1))
        )?;
        return Ok(());
    }
    let Some(reference) = &a.reference else {
        return Err(usage("--reference is required when --input holds frames"));
    };
    let decoded = a.frames.load(&a.input)?;
    let reference = a.frames.load(reference)?;
    psnr_table(out, &decoded, &reference)?;
    Ok(())
}

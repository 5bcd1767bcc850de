//! Two-stage per-GoP optimization.
//!
//! Stage one fits the canonical Gaussians to the first frame of the group
//! (key-frame canonical initialization). Stage two trains the deformation
//! field jointly with the canonical set, visiting the group's frames
//! round-robin. Both stages minimize the (optionally masked) mean squared
//! error with Adam.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::deformation::{frame_timestamp, DeformationField, FieldConfig};
use crate::error::{ConfigError, Error, Result, ShapeError};
use crate::gaussian2d::{
    flatten_grads, mask_clamped_position_grads, render, render_backward, Gaussian2D, GaussianGrad,
    GaussianSet, CHOL_EPS,
};
use crate::image::{Image, Mask};
use crate::optim::{adam_step, lr_schedule, AdamConfig, AdamState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub gop_size: usize,
    pub num_gaussians: usize,
    pub coarse_steps: usize,
    pub deform_steps: usize,
    pub lr_gaussian: f64,
    pub lr_field_start: f64,
    pub lr_field_end: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub field: FieldConfig,
    /// Emit a progress event every `log_every` steps (0 disables).
    pub log_every: usize,
}

impl TrainConfig {
    /// Full-scale schedule: 10-frame groups, 10K coarse and 60K deformation steps.
    pub fn paper() -> Self {
        Self {
            gop_size: 10,
            num_gaussians: 40_000,
            coarse_steps: 10_000,
            deform_steps: 60_000,
            lr_gaussian: 7e-3,
            lr_field_start: 1.6e-4,
            lr_field_end: 1.6e-5,
            adam: AdamConfig::default(),
            seed: 0,
            field: FieldConfig::default(),
            log_every: 1000,
        }
    }

    /// Desk-scale preset for clips up to 64x64: 512 Gaussians, 4000 steps in
    /// total. The constant 7e-3 Gaussian rate keeps knocking the canonical set
    /// around at this scale, so both stages use 1e-3 here, and the field starts
    /// faster to make up for the short run.
    pub fn tiny() -> Self {
        Self {
            num_gaussians: 512,
            coarse_steps: 1000,
            deform_steps: 3000,
            lr_gaussian: 1e-3,
            lr_field_start: 1e-3,
            lr_field_end: 1e-4,
            log_every: 250,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.gop_size == 0 {
            return fail("gop size must be at least 1");
        }
        if self.num_gaussians == 0 {
            return fail("need at least one Gaussian");
        }
        if !(self.lr_gaussian > 0.0 && self.lr_field_start > 0.0 && self.lr_field_end > 0.0) {
            return fail("learning rates must be positive");
        }
        if self.lr_field_end > self.lr_field_start {
            return fail("final field learning rate exceeds the initial one");
        }
        self.field.validate()
    }
}

/// Named configuration presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Tiny,
    Paper,
}

impl Profile {
    pub fn config(self) -> TrainConfig {
        match self {
            Profile::Tiny => TrainConfig::tiny(),
            Profile::Paper => TrainConfig::paper(),
        }
    }
}

impl FromStr for Profile {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "tiny" => Ok(Profile::Tiny),
            "paper" => Ok(Profile::Paper),
            other => Err(ConfigError::Invalid(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Coarse,
    Deform,
    Finetune,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Coarse => "coarse",
            Stage::Deform => "deform",
            Stage::Finetune => "finetune",
        })
    }
}

/// One progress record; `Display` renders a `key=value` log line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainEvent {
    pub stage: Stage,
    pub step: usize,
    pub frame: usize,
    pub loss: f64,
    pub psnr: f64,
}

impl fmt::Display for TrainEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage={} step={} frame={} loss={:.6e} psnr={}",
            self.stage,
            self.step,
            self.frame,
            self.loss,
            crate::media_io::format_psnr(self.psnr)
        )
    }
}

/// Sink for progress events.
pub type Logger<'a> = &'a mut dyn FnMut(&TrainEvent);

/// Contiguous `(start, len)` groups covering `frame_count` frames.
pub fn split_gops(frame_count: usize, gop_size: usize) -> Vec<(usize, usize)> {
    assert!(gop_size >= 1);
    (0..frame_count)
        .step_by(gop_size)
        .map(|start| (start, gop_size.min(frame_count - start)))
        .collect()
}

/// Mean squared error over unmasked pixel-channels and its gradient with
/// respect to `rendered`. A fully masked image has zero loss.
pub fn loss_l2(
    rendered: &Image,
    target: &Image,
    mask: Option<&Mask>,
) -> Result<(f64, Image), ShapeError> {
    rendered.check_same_shape(target)?;
    if let Some(m) = mask {
        if m.width() != target.width() || m.height() != target.height() {
            return Err(ShapeError {
                left_width: m.width(),
                left_height: m.height(),
                right_width: target.width(),
                right_height: target.height(),
            });
        }
    }
    let mut grad = Image::new(rendered.width(), rendered.height());
    let keep = |px: usize| mask.is_none_or(|m| !m.bits()[px]);
    let count = (0..rendered.width() * rendered.height())
        .filter(|&p| keep(p))
        .count()
        * 3;
    if count == 0 {
        return Ok((0.0, grad));
    }
    let scale = 2.0 / count as f64;
    let mut sum = 0.0;
    let (r, t, g) = (rendered.data(), target.data(), grad.data_mut());
    for px in (0..r.len() / 3).filter(|&p| keep(p)) {
        for c in px * 3..px * 3 + 3 {
            let d = r[c] - t[c];
            sum += d * d;
            g[c] = scale * d;
        }
    }
    Ok((sum / count as f64, grad))
}

pub(crate) fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Renders `set` (positions clamped), scores it, and backpropagates to the
/// unclamped parameters.
pub(crate) fn render_loss_and_grad(
    set: &GaussianSet,
    target: &Image,
    mask: Option<&Mask>,
) -> (f64, Vec<GaussianGrad>) {
    let (w, h) = (target.width(), target.height());
    let clamped = set.with_clamped_positions();
    let img = render(&clamped, w, h);
    let (loss, grad_img) = loss_l2(&img, target, mask).expect("frame and model sizes agree");
    let mut grads = render_backward(&clamped, &grad_img, w, h);
    mask_clamped_position_grads(set, &mut grads);
    (loss, grads)
}

/// Seeded starting point for the coarse stage: uniform positions, isotropic
/// footprints about one inter-Gaussian spacing wide, colors sampled from the
/// key frame.
pub fn initial_gaussians(key_frame: &Image, mask: Option<&Mask>, count: usize, seed: u64) -> GaussianSet {
    let (w, h) = (key_frame.width(), key_frame.height());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = ((w * h) as f64 / count as f64).sqrt();
    let chol = [spacing / w as f64 - CHOL_EPS, 0.0, spacing / h as f64 - CHOL_EPS].map(|v| v.max(0.0));
    // Overlapping unit-amplitude Gaussians at this density sum to about 2π.
    let gain = 1.0 / (2.0 * std::f64::consts::PI);
    let fallback = unmasked_mean(key_frame, mask);
    let gaussians = (0..count)
        .map(|_| {
            let mu = [rng.gen::<f64>(), rng.gen::<f64>()];
            let x = ((mu[0] * w as f64) as usize).min(w - 1);
            let y = ((mu[1] * h as f64) as usize).min(h - 1);
            let color = if mask.is_some_and(|m| m.is_masked(x, y)) {
                fallback
            } else {
                key_frame.pixel(x, y)
            };
            Gaussian2D::new(mu, chol, color.map(|c| c * gain))
        })
        .collect();
    GaussianSet::new(gaussians, w, h)
}

fn unmasked_mean(img: &Image, mask: Option<&Mask>) -> [f64; 3] {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if mask.is_some_and(|m| m.is_masked(x, y)) {
                continue;
            }
            let p = img.pixel(x, y);
            for c in 0..3 {
                acc[c] += p[c];
            }
            n += 1;
        }
    }
    if n == 0 {
        [0.5; 3]
    } else {
        acc.map(|v| v / n as f64)
    }
}

/// Key-frame canonical initialization: seeds `cfg.num_gaussians` Gaussians
/// and fits them to `key_frame` for `cfg.coarse_steps` Adam steps.
pub fn init_canonical_kfci(
    key_frame: &Image,
    mask: Option<&Mask>,
    cfg: &TrainConfig,
    log: Logger<'_>,
) -> GaussianSet {
    let mut set = initial_gaussians(key_frame, mask, cfg.num_gaussians, cfg.seed);
    let mut flat = set.to_flat();
    let mut state = AdamState::new(flat.len());
    for step in 0..cfg.coarse_steps {
        let (loss, grads) = render_loss_and_grad(&set, key_frame, mask);
        adam_step(&mut flat, &flatten_grads(&grads), &mut state, cfg.lr_gaussian, &cfg.adam);
        set.assign_flat(&flat);
        set.clamp_positions_in_place();
        flat = set.to_flat();
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.coarse_steps) {
            log(&TrainEvent {
                stage: Stage::Coarse,
                step,
                frame: 0,
                loss,
                psnr: psnr_from_mse(loss),
            });
        }
    }
    set
}

/// Canonical Gaussians plus the deformation field for one group of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct GopModel {
    pub canonical: GaussianSet,
    pub field: DeformationField,
    pub first_frame: usize,
    pub num_frames: usize,
}

impl GopModel {
    pub fn timestamp(&self, offset: usize) -> f64 {
        frame_timestamp(offset, self.num_frames)
    }

    /// Deformed Gaussians for frame `offset` of the group, positions clamped.
    pub fn deformed(&self, offset: usize) -> GaussianSet {
        self.field
            .deform(&self.canonical, self.timestamp(offset))
            .with_clamped_positions()
    }

    pub fn render_frame(&self, offset: usize, width: usize, height: usize) -> Image {
        render(&self.deformed(offset), width, height)
    }
}

/// Optimizer state for joint canonical + field training.
pub(crate) struct JointOptimizer {
    canonical: AdamState,
    field: Vec<AdamState>,
}

impl JointOptimizer {
    pub(crate) fn new(model: &GopModel) -> Self {
        Self {
            canonical: AdamState::new(model.canonical.len() * crate::gaussian2d::PARAMS_PER_GAUSSIAN),
            field: model
                .field
                .tensors()
                .iter()
                .map(|t| AdamState::new(t.len()))
                .collect(),
        }
    }

    /// One deformation-stage step on frame `offset`; returns the loss.
    pub(crate) fn step(
        &mut self,
        model: &mut GopModel,
        target: &Image,
        mask: Option<&Mask>,
        offset: usize,
        lr_canonical: f64,
        lr_field: Option<f64>,
        adam: &AdamConfig,
    ) -> f64 {
        let t = model.timestamp(offset);
        let (deformed, cache) = model.field.forward(&model.canonical, t);
        let (loss, grads) = render_loss_and_grad(&deformed, target, mask);
        let (field_grad, canon_grad) = model.field.backward(&model.canonical, t, &cache, &grads);

        let mut flat = model.canonical.to_flat();
        adam_step(&mut flat, &flatten_grads(&canon_grad), &mut self.canonical, lr_canonical, adam);
        model.canonical.assign_flat(&flat);
        model.canonical.clamp_positions_in_place();

        if let Some(lr) = lr_field {
            for ((p, g), s) in model
                .field
                .tensors_mut()
                .into_iter()
                .zip(field_grad.tensors())
                .zip(self.field.iter_mut())
            {
                adam_step(p, g, s, lr, adam);
            }
        }
        loss
    }
}

fn check_frames(frames: &[Image], masks: Option<&[Mask]>) -> Result<()> {
    let first = frames.first().ok_or(Error::NoFrames)?;
    for f in frames {
        first.check_same_shape(f)?;
    }
    if let Some(masks) = masks {
        if masks.len() != frames.len() {
            return Err(ConfigError::Invalid(format!(
                "{} masks for {} frames",
                masks.len(),
                frames.len()
            ))
            .into());
        }
        for m in masks {
            if m.width() != first.width() || m.height() != first.height() {
                return Err(ShapeError {
                    left_width: m.width(),
                    left_height: m.height(),
                    right_width: first.width(),
                    right_height: first.height(),
                }
                .into());
            }
        }
    }
    Ok(())
}

/// Trains one group: key-frame canonical initialization on `frames[0]`,
/// then `cfg.deform_steps` joint steps over the frames in round-robin order.
/// `masks`, when given, holds one mask per frame.
pub fn train_gop(
    frames: &[Image],
    masks: Option<&[Mask]>,
    cfg: &TrainConfig,
    log: Logger<'_>,
) -> Result<GopModel> {
    cfg.validate()?;
    check_frames(frames, masks)?;
    if frames.len() > cfg.gop_size {
        return Err(ConfigError::Invalid(format!(
            "{} frames exceed the group size {}",
            frames.len(),
            cfg.gop_size
        ))
        .into());
    }
    let mask_of = |i: usize| masks.map(|m| &m[i]);
    let canonical = init_canonical_kfci(&frames[0], mask_of(0), cfg, log);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD1B5_4A32_D192_ED03);
    let field = DeformationField::new(cfg.field, &mut rng)?;
    let mut model = GopModel {
        canonical,
        field,
        first_frame: 0,
        num_frames: frames.len(),
    };
    let mut opt = JointOptimizer::new(&model);
    for step in 0..cfg.deform_steps {
        let offset = step % frames.len();
        let lr_field = lr_schedule(step, cfg.deform_steps, cfg.lr_field_start, cfg.lr_field_end);
        let loss = opt.step(
            &mut model,
            &frames[offset],
            mask_of(offset),
            offset,
            cfg.lr_gaussian,
            Some(lr_field),
            &cfg.adam,
        );
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.deform_steps) {
            log(&TrainEvent {
                stage: Stage::Deform,
                step,
                frame: offset,
                loss,
                psnr: psnr_from_mse(loss),
            });
        }
    }
    Ok(model)
}

/// A whole clip: global header plus one model per group of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoModel {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub gop_size: usize,
    pub field: FieldConfig,
    pub gops: Vec<GopModel>,
}

impl VideoModel {
    /// Locates the group holding `frame` and the frame's offset inside it.
    pub fn locate(&self, frame: usize) -> Option<(&GopModel, usize)> {
        self.gops
            .iter()
            .find(|g| (g.first_frame..g.first_frame + g.num_frames).contains(&frame))
            .map(|g| (g, frame - g.first_frame))
    }

    pub fn render_frame(&self, frame: usize, width: usize, height: usize) -> Option<Image> {
        self.locate(frame)
            .map(|(g, offset)| g.render_frame(offset, width, height))
    }

    /// Rounds every parameter to the nearest `f32`, the precision of the float stream.
    pub fn round_to_f32(&mut self) {
        for gop in &mut self.gops {
            for g in &mut gop.canonical.gaussians {
                g.mu = g.mu.map(|v| v as f32 as f64);
                g.chol = g.chol.map(|v| v as f32 as f64);
                g.color = g.color.map(|v| v as f32 as f64);
            }
            for t in gop.field.tensors_mut() {
                t.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
    }
}

/// Per-group seed derived from the run seed.
pub fn gop_seed(seed: u64, gop_index: usize) -> u64 {
    seed.wrapping_add((gop_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains every group of `frames` independently, up to `jobs` at a time.
/// Events are reported with the index of the group that produced them.
pub fn train_video(
    frames: &[Image],
    masks: Option<&[Mask]>,
    cfg: &TrainConfig,
    jobs: usize,
    log: &(dyn Fn(usize, &TrainEvent) + Sync),
) -> Result<VideoModel> {
    cfg.validate()?;
    check_frames(frames, masks)?;
    let groups = split_gops(frames.len(), cfg.gop_size);
    let run = |(index, &(start, len)): (usize, &(usize, usize))| -> Result<GopModel> {
        let gop_cfg = TrainConfig {
            seed: gop_seed(cfg.seed, index),
            ..*cfg
        };
        let gop_masks = masks.map(|m| &m[start..start + len]);
        let mut sink = |e: &TrainEvent| log(index, e);
        let mut model = train_gop(&frames[start..start + len], gop_masks, &gop_cfg, &mut sink)?;
        model.first_frame = start;
        Ok(model)
    };
    let gops: Vec<GopModel> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
        pool.install(|| groups.par_iter().enumerate().map(run).collect::<Result<_>>())?
    } else {
        groups.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    Ok(VideoModel {
        width: frames[0].width(),
        height: frames[0].height(),
        frame_count: frames.len(),
        gop_size: cfg.gop_size,
        field: cfg.field,
        gops,
    })
}

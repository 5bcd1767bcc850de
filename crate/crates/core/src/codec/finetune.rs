//! Quantization-aware fine-tuning of a trained group.

use half::f16;
use rayon::prelude::*;

use super::quant::{cholesky_ste_grad, round_f16, QuantParams, QuantizedTensor, MIN_GAMMA};
use super::rvq::{
    commitment_loss, ema_update, kmeans_init, rvq_decode, rvq_encode, stage_residuals, EmaState,
    RvqCodebooks, EMA_DECAY, EMA_EPSILON,
};
use crate::deformation::{DeformationField, FieldConfig};
use crate::error::{ConfigError, Error, Result};
use crate::gaussian2d::{flatten_grads, Gaussian2D, GaussianSet, PARAMS_PER_GAUSSIAN};
use crate::image::Image;
use crate::optim::{adam_step, AdamState};
use crate::training::{
    gop_seed, psnr_from_mse, render_loss_and_grad, GopModel, Logger, Stage, TrainConfig,
    TrainEvent, VideoModel,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecConfig {
    /// RVQ stages `M`.
    pub rvq_stages: usize,
    /// Learned entries per stage `B`.
    pub rvq_size: usize,
    /// Weight of the commitment term.
    pub lambda: f64,
    pub steps: usize,
    /// Adam rate for the canonical Gaussians.
    pub lr_gaussian: f64,
    /// Adam rate for the quantizer steps and offsets.
    pub lr_quant: f64,
    pub ema_decay: f64,
    pub ema_epsilon: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            rvq_stages: 2,
            rvq_size: 64,
            lambda: 0.1,
            steps: 600,
            lr_gaussian: 2e-4,
            lr_quant: 1e-5,
            ema_decay: EMA_DECAY,
            ema_epsilon: EMA_EPSILON,
            seed: 0,
            log_every: 100,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.rvq_stages == 0 || self.rvq_stages > u8::MAX as usize {
            return fail("rvq stages must be in 1..=255");
        }
        if self.rvq_size == 0 || self.rvq_size >= u16::MAX as usize {
            return fail("rvq codebook size must be in 1..65535");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be non-negative");
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return fail("ema decay must lie in (0, 1)");
        }
        if !(self.lr_gaussian > 0.0) {
            return fail("learning rate must be positive");
        }
        if !(self.lr_quant >= 0.0) {
            return fail("quantizer learning rate must be non-negative");
        }
        Ok(())
    }
}

/// Deformation field with every tensor held as 8-bit codes.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedField {
    pub config: FieldConfig,
    /// Same order as [`DeformationField::tensors`].
    pub tensors: Vec<QuantizedTensor>,
}

impl QuantizedField {
    pub fn quantize(field: &DeformationField) -> Self {
        Self {
            config: *field.config(),
            tensors: field
                .tensors()
                .into_iter()
                .map(QuantizedTensor::quantize)
                .collect(),
        }
    }

    pub fn dequantize(&self) -> DeformationField {
        let mut field = DeformationField::zeros(self.config).expect("validated config");
        for (dst, src) in field.tensors_mut().into_iter().zip(&self.tensors) {
            dst.copy_from_slice(&src.dequantize());
        }
        field
    }
}

/// A group in its compressed form.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedGop {
    pub first_frame: usize,
    pub num_frames: usize,
    pub positions: Vec<[f16; 2]>,
    pub quant: QuantParams,
    pub chol_codes: Vec<[u8; 3]>,
    /// Entries hold `f32`-representable values.
    pub codebooks: RvqCodebooks,
    /// `N x M`; index `B` selects the zero entry.
    pub color_indices: Vec<Vec<u16>>,
    pub field: QuantizedField,
}

impl QuantizedGop {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn to_model(&self, width: usize, height: usize) -> GopModel {
        let colors = rvq_decode(&self.color_indices, &self.codebooks);
        let gaussians = self
            .positions
            .iter()
            .zip(&self.chol_codes)
            .zip(colors)
            .map(|((p, codes), color)| {
                Gaussian2D::new([p[0].to_f64(), p[1].to_f64()], self.quant.dequantize(*codes), color)
            })
            .collect();
        GopModel {
            canonical: GaussianSet::new(gaussians, width, height),
            field: self.field.dequantize(),
            first_frame: self.first_frame,
            num_frames: self.num_frames,
        }
    }
}

/// Compressed clip; the counterpart of [`VideoModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedVideo {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub gop_size: usize,
    pub field: FieldConfig,
    pub rvq_stages: usize,
    pub rvq_size: usize,
    pub gops: Vec<QuantizedGop>,
}

impl CompressedVideo {
    pub fn to_model(&self) -> VideoModel {
        VideoModel {
            width: self.width,
            height: self.height,
            frame_count: self.frame_count,
            gop_size: self.gop_size,
            field: self.field,
            gops: self
                .gops
                .iter()
                .map(|g| g.to_model(self.width, self.height))
                .collect(),
        }
    }
}

/// The canonical set as the decoder will see it: half-precision positions,
/// dequantized Cholesky factors and RVQ colors.
fn simulated_set(
    canonical: &GaussianSet,
    gamma: &[f64; 3],
    beta: &[f64; 3],
    colors: &[[f64; 3]],
) -> GaussianSet {
    let gaussians = canonical
        .gaussians
        .iter()
        .zip(colors)
        .map(|(g, c)| {
            let chol = std::array::from_fn(|i| {
                let code = super::quant::quantize_cholesky(g.chol[i], gamma[i], beta[i]);
                super::quant::dequantize_cholesky(code, gamma[i], beta[i])
            });
            Gaussian2D::new([round_f16(g.mu[0]), round_f16(g.mu[1])], chol, *c)
        })
        .collect();
    GaussianSet::new(gaussians, canonical.width, canonical.height)
}

/// Quantization-aware fine-tuning of one group.
///
/// The field is quantized to 8 bits up front and frozen. The canonical set
/// then trains through simulated quantization: positions rounded to binary16,
/// Cholesky factors through the learned 8-bit quantizer and colors through
/// RVQ, all with straight-through gradients. Codebooks start from k-means and
/// follow their assignments by EMA. The logged loss is `L2 + λ·L_c`.
pub fn finetune_quantized(
    model: &GopModel,
    frames: &[Image],
    codec: &CodecConfig,
    train: &TrainConfig,
    log: Logger<'_>,
) -> Result<QuantizedGop> {
    codec.validate()?;
    if frames.is_empty() {
        return Err(Error::NoFrames);
    }
    if frames.len() != model.num_frames {
        return Err(ConfigError::Invalid(format!(
            "{} frames for a group of {}",
            frames.len(),
            model.num_frames
        ))
        .into());
    }
    for f in frames {
        if f.width() != model.canonical.width || f.height() != model.canonical.height {
            return Err(crate::error::ShapeError {
                left_width: f.width(),
                left_height: f.height(),
                right_width: model.canonical.width,
                right_height: model.canonical.height,
            }
            .into());
        }
    }

    let field = QuantizedField::quantize(&model.field);
    let mut frozen = model.clone();
    frozen.field = field.dequantize();

    let chols: Vec<[f64; 3]> = model.canonical.gaussians.iter().map(|g| g.chol).collect();
    let init = QuantParams::from_range(&chols);
    let mut gamma = init.gamma.map(|v| v as f64);
    let mut beta = init.beta.map(|v| v as f64);
    let colors = |set: &GaussianSet| set.gaussians.iter().map(|g| g.color).collect::<Vec<_>>();
    let mut books = kmeans_init(&colors(&model.canonical), codec.rvq_size, codec.rvq_stages, codec.seed);
    let mut ema = EmaState::new(&books, codec.ema_decay, codec.ema_epsilon);

    let mut canon_state = AdamState::new(model.canonical.len() * PARAMS_PER_GAUSSIAN);
    let mut quant_state = AdamState::new(6);

    for step in 0..codec.steps {
        let offset = step % frames.len();
        let t = frozen.timestamp(offset);
        let current = colors(&frozen.canonical);
        let indices = rvq_encode(&current, &books);
        let decoded = rvq_decode(&indices, &books);
        let sim = simulated_set(&frozen.canonical, &gamma, &beta, &decoded);

        let (deformed, cache) = frozen.field.forward(&sim, t);
        let (l2, grads) = render_loss_and_grad(&deformed, &frames[offset], None);
        let (_, sim_grads) = frozen.field.backward(&sim, t, &cache, &grads);

        let mut quant_grad = [0.0; 6];
        let mut canon_grads = sim_grads;
        for (g, cg) in frozen.canonical.gaussians.iter().zip(canon_grads.iter_mut()) {
            for i in 0..3 {
                let [dl, dg, db] = cholesky_ste_grad(g.chol[i], gamma[i], beta[i]);
                quant_grad[i] += cg.chol[i] * dg;
                quant_grad[3 + i] += cg.chol[i] * db;
                cg.chol[i] *= dl;
            }
        }

        let mut flat = frozen.canonical.to_flat();
        adam_step(&mut flat, &flatten_grads(&canon_grads), &mut canon_state, codec.lr_gaussian, &train.adam);
        frozen.canonical.assign_flat(&flat);
        frozen.canonical.clamp_positions_in_place();

        let mut qp = [gamma[0], gamma[1], gamma[2], beta[0], beta[1], beta[2]];
        adam_step(&mut qp, &quant_grad, &mut quant_state, codec.lr_quant, &train.adam);
        gamma = [qp[0], qp[1], qp[2]].map(|g| g.max(MIN_GAMMA));
        beta = [qp[3], qp[4], qp[5]];

        let lc = commitment_loss(&current, &books, &indices);
        let residuals = stage_residuals(&current, &books, &indices);
        ema_update(&mut books, &mut ema, &residuals, &indices);

        if codec.log_every > 0 && (step % codec.log_every == 0 || step + 1 == codec.steps) {
            log(&TrainEvent {
                stage: Stage::Finetune,
                step,
                frame: offset,
                loss: l2 + codec.lambda * lc,
                psnr: psnr_from_mse(l2),
            });
        }
    }

    // Export with the stored precisions so decode reproduces this exactly.
    let quant = QuantParams {
        gamma: gamma.map(|g| (g as f32).max(MIN_GAMMA as f32)),
        beta: beta.map(|b| b as f32),
    };
    books.round_to_f32();
    let canonical = &frozen.canonical;
    Ok(QuantizedGop {
        first_frame: model.first_frame,
        num_frames: model.num_frames,
        positions: canonical
            .gaussians
            .iter()
            .map(|g| [f16::from_f64(g.mu[0]), f16::from_f64(g.mu[1])])
            .collect(),
        quant,
        chol_codes: canonical.gaussians.iter().map(|g| quant.quantize(g.chol)).collect(),
        color_indices: rvq_encode(&colors(canonical), &books),
        codebooks: books,
        field,
    })
}

/// Fine-tunes every group of `video`, up to `jobs` at a time. `frames` is the
/// whole original clip.
pub fn compress_video(
    video: &VideoModel,
    frames: &[Image],
    codec: &CodecConfig,
    train: &TrainConfig,
    jobs: usize,
    log: &(dyn Fn(usize, &TrainEvent) + Sync),
) -> Result<CompressedVideo> {
    codec.validate()?;
    if frames.len() != video.frame_count {
        return Err(ConfigError::Invalid(format!(
            "{} reference frames for a {}-frame stream",
            frames.len(),
            video.frame_count
        ))
        .into());
    }
    let run = |(index, gop): (usize, &GopModel)| -> Result<QuantizedGop> {
        let cfg = CodecConfig {
            seed: gop_seed(codec.seed, index),
            ..*codec
        };
        let mut sink = |e: &TrainEvent| log(index, e);
        let span = &frames[gop.first_frame..gop.first_frame + gop.num_frames];
        finetune_quantized(gop, span, &cfg, train, &mut sink)
    };
    let gops: Vec<QuantizedGop> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
        pool.install(|| video.gops.par_iter().enumerate().map(run).collect::<Result<_>>())?
    } else {
        video.gops.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    Ok(CompressedVideo {
        width: video.width,
        height: video.height,
        frame_count: video.frame_count,
        gop_size: video.gop_size,
        field: video.field,
        rvq_stages: codec.rvq_stages,
        rvq_size: codec.rvq_size,
        gops,
    })
}

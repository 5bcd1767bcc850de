//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is printed by a plain
//! `cargo test`. Exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gsvideo_core::codec::rvq::stage_residuals;
use gsvideo_core::codec::{
    commitment_loss, compress_video, dequantize_cholesky, deserialize, quantize_cholesky,
    rvq_encode, serialize_float, serialize_quantized, CodecConfig, RvqCodebooks, Stream,
};
use gsvideo_core::deformation::frame_timestamp;
use gsvideo_core::fixtures::{self, FixtureConfig, FixtureKind};
use gsvideo_core::gaussian2d::{
    flatten_grads, mask_clamped_position_grads, render_backward, render_reference,
    PARAMS_PER_GAUSSIAN,
};
use gsvideo_core::hash_encoding::{hash_index, level_resolutions, HashGrid, HashGridConfig};
use gsvideo_core::media_io::{self, mean_psnr, psnr};
use gsvideo_core::training::{
    init_canonical_kfci, loss_l2, train_gop, train_video, TrainConfig, VideoModel,
};
use gsvideo_core::{
    render, DeformationField, EncodingVariant, FieldConfig, Gaussian2D, GaussianSet, Image, Mask,
};

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }
}

fn render_all(model: &VideoModel) -> Vec<Image> {
    (0..model.frame_count)
        .map(|k| model.render_frame(k, model.width, model.height).unwrap())
        .collect()
}

fn train_fixture_a(field: FieldConfig) -> VideoModel {
    let frames = fixtures::generate(&FixtureConfig::desk(FixtureKind::MovingSquare, 0));
    let cfg = TrainConfig {
        field,
        log_every: 0,
        ..TrainConfig::tiny()
    };
    let mut model = train_video(&frames, None, &cfg, 1, &|_, _| {}).unwrap();
    model.round_to_f32();
    model
}

// ---------------------------------------------------------------- gradients

fn small_field_config() -> FieldConfig {
    let grid = HashGridConfig {
        dims: 2,
        levels: 2,
        features_per_level: 2,
        log2_table_size: 4,
        base_resolution: 3,
        per_level_scale: 2.0,
    };
    FieldConfig {
        spatial: Some(grid),
        temporal: Some(HashGridConfig { dims: 3, ..grid }),
        posenc_freqs: 2,
        hidden_width: 8,
    }
}

fn multi_frame_loss(canon: &GaussianSet, field: &DeformationField, frames: &[Image]) -> f64 {
    let n = frames.len();
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let d = field
                .deform(canon, frame_timestamp(k, n))
                .with_clamped_positions();
            loss_l2(&render(&d, f.width(), f.height()), f, None).unwrap().0
        })
        .sum()
}

fn check_gradients(report: &mut Report) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (w, h) = (8, 8);
    let gaussians = (0..3)
        .map(|_| {
            Gaussian2D::new(
                [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)],
                [rng.gen_range(0.2..0.3), rng.gen_range(-0.05..0.05), rng.gen_range(0.2..0.3)],
                [0.0; 3].map(|_: f64| rng.gen_range(0.2..0.8)),
            )
        })
        .collect();
    let canon = GaussianSet::new(gaussians, w, h);
    let mut field = DeformationField::new(small_field_config(), &mut rng).unwrap();
    // non-zero heads and tables so every path carries gradient
    for layer in field.mlp.layers_mut() {
        layer.weight.mapv_inplace(|v| v + rng.gen_range(-0.1..0.1));
        layer.bias.mapv_inplace(|_| rng.gen_range(-0.05..0.05));
    }
    for t in field.tensors_mut().into_iter().take(2) {
        t.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    let frames: Vec<Image> = (0..2)
        .map(|_| {
            let data = (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
            Image::from_data(w, h, data).unwrap()
        })
        .collect();

    let mut canon_grad = vec![0.0; canon.len() * PARAMS_PER_GAUSSIAN];
    let mut field_grad: Vec<Vec<f64>> = field.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for (k, target) in frames.iter().enumerate() {
        let t = frame_timestamp(k, frames.len());
        let (deformed, cache) = field.forward(&canon, t);
        let clamped = deformed.with_clamped_positions();
        let (_, g_img) = loss_l2(&render(&clamped, w, h), target, None).unwrap();
        let mut g = render_backward(&clamped, &g_img, w, h);
        mask_clamped_position_grads(&deformed, &mut g);
        let (fg, cg) = field.backward(&canon, t, &cache, &g);
        for (a, b) in canon_grad.iter_mut().zip(flatten_grads(&cg)) {
            *a += b;
        }
        for (acc, t) in field_grad.iter_mut().zip(fg.tensors()) {
            for (a, b) in acc.iter_mut().zip(t) {
                *a += b;
            }
        }
    }

    let step = 1e-6;
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let base = canon.to_flat();
    for i in 0..base.len() {
        let eval = |d: f64| {
            let mut p = base.clone();
            p[i] += d;
            let mut c = canon.clone();
            c.assign_flat(&p);
            multi_frame_loss(&c, &field, &frames)
        };
        let fd = (eval(step) - eval(-step)) / (2.0 * step);
        worst = worst.max(rel(canon_grad[i], fd));
        checked += 1;
    }
    let sizes: Vec<usize> = field.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let eval = |d: f64| {
                let mut f = field.clone();
                f.tensors_mut()[ti][j] += d;
                multi_frame_loss(&canon, &f, &frames)
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            worst = worst.max(rel(field_grad[ti][j], fd));
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report.record(
        "gradient suite",
        worst < 1e-4 && secs < 10.0,
        format!("{checked} parameters, max relative error {worst:.2e}, {secs:.2} s"),
    );
}

// ---------------------------------------------------------------- renderer

fn check_render_oracle(report: &mut Report) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let w = rng.gen_range(1..=64);
        let h = rng.gen_range(1..=64);
        let n = rng.gen_range(0..=200);
        let gaussians = (0..n)
            .map(|_| {
                Gaussian2D::new(
                    [rng.gen_range(-0.1..1.1), rng.gen_range(-0.1..1.1)],
                    [
                        rng.gen_range(-0.15..0.15),
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.15..0.15),
                    ],
                    [0.0; 3].map(|_: f64| rng.gen_range(0.0..1.0)),
                )
            })
            .collect();
        let set = GaussianSet::new(gaussians, w, h);
        worst = worst.max(render(&set, w, h).max_abs_diff(&render_reference(&set, w, h)));
    }
    let secs = started.elapsed().as_secs_f64();
    report.record(
        "render oracle",
        worst <= 1e-5 && secs < 30.0,
        format!("100 scenes, max channel difference {worst:.2e}, {secs:.2} s"),
    );
}

// ---------------------------------------------------------------- hash grid

fn check_hash(report: &mut Report) {
    let cfg = HashGridConfig::spatial_default();
    let res = level_resolutions(&cfg);
    let expected = vec![16, 24, 36, 54, 81, 121, 182, 273];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = HashGrid::new(cfg, &mut rng).unwrap();
    let grid3 = HashGrid::new(HashGridConfig::temporal_default(), &mut rng).unwrap();
    let f = cfg.features_per_level;
    let mut continuity_ok = 0;
    let mut vertex_ok = 0;
    for _ in 0..1000 {
        // continuity: a 1e-9 nudge moves every feature by far less than 1e-6
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| (v + rng.gen_range(-1e-9..1e-9)).clamp(0.0, 1.0)).collect();
        let (a, b) = (grid.encode(&x), grid.encode(&y));
        if a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-6) {
            continuity_ok += 1;
        }
        // vertex exactness: at a level-l vertex the level-l features are the stored row
        let level = rng.gen_range(0..cfg.levels);
        let r = grid.resolutions()[level];
        // only coordinates with c / r * r == c sit exactly on the vertex
        let coord = |rng: &mut ChaCha8Rng| loop {
            let c = rng.gen_range(0..=r);
            let x = c as f64 / r as f64;
            if x * r as f64 == c as f64 {
                break (c, x);
            }
        };
        let (v, x): (Vec<u32>, Vec<f64>) = (0..2).map(|_| coord(&mut rng)).unzip();
        let enc = grid.encode(&x);
        let row = hash_index(&v, cfg.table_size());
        let base = (level * cfg.table_size() + row) * f;
        if enc[level * f..(level + 1) * f] == grid.tables()[base..base + f] {
            vertex_ok += 1;
        }
    }
    // the 3D grid must satisfy the same continuity
    let mut cont3 = 0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| (v + 1e-9f64).min(1.0)).collect();
        let (a, b) = (grid3.encode(&x), grid3.encode(&y));
        if a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-6) {
            cont3 += 1;
        }
    }
    report.record(
        "hash conformance",
        res == expected && continuity_ok == 1000 && vertex_ok == 1000 && cont3 == 1000,
        format!(
            "resolutions {res:?}; continuity {continuity_ok}/1000 (2D), {cont3}/1000 (3D); vertex exactness {vertex_ok}/1000"
        ),
    );
}

// ---------------------------------------------------------------- training

fn check_overfit(report: &mut Report, full: &VideoModel, secs: f64) -> f64 {
    let frames = fixtures::generate(&FixtureConfig::desk(FixtureKind::MovingSquare, 0));
    let p = mean_psnr(&render_all(full), &frames).unwrap();
    report.record(
        "desk-scale overfit",
        p >= 30.0 && secs < 600.0,
        format!("fixture (a) mean PSNR {p:.2} dB in {secs:.1} s"),
    );
    p
}

fn check_kfci(report: &mut Report) {
    let frames = fixtures::generate(&FixtureConfig::desk(FixtureKind::MovingSquare, 0));
    let cfg = TrainConfig {
        log_every: 0,
        ..TrainConfig::tiny()
    };
    let canonical = init_canonical_kfci(&frames[0], None, &cfg, &mut |_| {});
    let img = render(&canonical, 32, 32);
    let key = psnr(&img, &frames[0]).unwrap();
    let avg = psnr(&img, &Image::mean_of(&frames).unwrap()).unwrap();
    report.record(
        "KFCI property",
        key >= avg + 2.0,
        format!("canonical vs key frame {key:.2} dB, vs frame average {avg:.2} dB"),
    );
}

fn check_ablation(report: &mut Report, full_psnr: f64) {
    let frames = fixtures::generate(&FixtureConfig::desk(FixtureKind::MovingSquare, 0));
    let mut ok = true;
    let mut detail = format!("full {full_psnr:.2} dB");
    for (name, variant) in [
        ("spatial-only", EncodingVariant::SpatialOnly),
        ("temporal-only", EncodingVariant::TemporalOnly),
    ] {
        let model = train_fixture_a(FieldConfig::default().with_variant(variant));
        let p = mean_psnr(&render_all(&model), &frames).unwrap();
        ok &= full_psnr >= p - 0.1;
        detail.push_str(&format!(", {name} {p:.2} dB"));
    }
    report.record("ablation direction", ok, detail);
}

// ---------------------------------------------------------------- codec

fn check_compression(report: &mut Report, full: &VideoModel, full_psnr: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut bound_ok = true;
    for _ in 0..1_000_000 {
        let gamma: f64 = rng.gen_range(1e-6..1.0);
        let beta: f64 = rng.gen_range(-1.0..1.0);
        let l = beta + rng.gen_range(0.0..=255.0) * gamma;
        let back = dequantize_cholesky(quantize_cholesky(l, gamma, beta), gamma, beta);
        bound_ok &= (back - l).abs() <= gamma * (1.0 + 1e-12);
    }

    let mut mono_ok = true;
    let mut lc_ok = true;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..8);
        let m = rng.gen_range(1..4);
        let b = rng.gen_range(1..6);
        let colors: Vec<[f64; 3]> = (0..n).map(|_| [0.0; 3].map(|_: f64| rng.gen_range(-0.5..1.5))).collect();
        let books = RvqCodebooks::new(
            (0..m)
                .map(|_| (0..b).map(|_| [0.0; 3].map(|_: f64| rng.gen_range(-1.0..1.0))).collect())
                .collect(),
        );
        let idx = rvq_encode(&colors, &books);
        let res = stage_residuals(&colors, &books, &idx);
        let norm = |v: &[f64; 3]| v.iter().map(|x| x * x).sum::<f64>();
        let mut direct = 0.0;
        for (i, c) in colors.iter().enumerate() {
            // residual recomputed from scratch for each stage
            let mut prev = norm(c);
            for k in 0..m {
                let mut r = *c;
                for j in 0..=k {
                    let e = books.entry(j, idx[i][j] as usize);
                    if j == k {
                        direct += (0..3).map(|q| (r[q] - e[q]).powi(2)).sum::<f64>();
                    }
                    r = [r[0] - e[0], r[1] - e[1], r[2] - e[2]];
                }
                let now = norm(&r);
                mono_ok &= now <= prev && norm(&res[i][k]) >= now;
                prev = now;
            }
        }
        direct /= (n * b) as f64;
        lc_ok &= (commitment_loss(&colors, &books, &idx) - direct).abs() <= 1e-12 * direct.max(1.0);
    }

    let frames = fixtures::generate(&FixtureConfig::desk(FixtureKind::MovingSquare, 0));
    let codec = CodecConfig {
        log_every: 0,
        ..CodecConfig::default()
    };
    let train = TrainConfig::tiny();
    let compressed = compress_video(full, &frames, &codec, &train, 1, &|_, _| {}).unwrap();
    let q_psnr = mean_psnr(&render_all(&compressed.to_model()), &frames).unwrap();
    let float_bytes = serialize_float(full).len();
    let quant_bytes = serialize_quantized(&compressed).len();
    let ratio = float_bytes as f64 / quant_bytes as f64;
    report.record(
        "compression suite",
        bound_ok && mono_ok && lc_ok && full_psnr - q_psnr <= 1.0 && ratio >= 2.5,
        format!(
            "quantizer bound {bound_ok}, RVQ monotone {mono_ok}, L_c oracle {lc_ok}; float {full_psnr:.2} dB vs M=2,B=64 {q_psnr:.2} dB; {float_bytes} vs {quant_bytes} bytes ({ratio:.2}x)"
        ),
    );
    check_bitstream(report, full, &serialize_quantized(&compressed));
}

fn check_bitstream(report: &mut Report, full: &VideoModel, quant_bytes: &[u8]) {
    let float_bytes = serialize_float(full);
    let back = deserialize(&float_bytes).unwrap().to_model();
    let float_exact = render_all(&back) == render_all(full);
    let quant = deserialize(quant_bytes).unwrap();
    let Stream::Quantized(c) = &quant else {
        panic!("expected a quantized stream")
    };
    let quant_exact = serialize_quantized(c) == quant_bytes;

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let original = quant.to_model();
    let original_frames = render_all(&original);
    let mut silent = 0;
    for case in 0..1000 {
        let src: &[u8] = if case % 2 == 0 { &float_bytes } else { quant_bytes };
        let mut bytes = src.to_vec();
        let pos = rng.gen_range(0..bytes.len());
        bytes[pos] ^= rng.gen_range(1..=255u8);
        if let Ok(stream) = deserialize(&bytes) {
            let m = stream.to_model();
            let reference = if case % 2 == 0 { full } else { &original };
            let same_header = m.width == reference.width
                && m.height == reference.height
                && m.frame_count == reference.frame_count
                && m.gop_size == reference.gop_size
                && m.field == reference.field;
            let frames = render_all(&m);
            let differs = if case % 2 == 0 {
                frames != render_all(full)
            } else {
                frames != original_frames
            };
            if !(same_header && differs) {
                silent += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report.record(
        "bitstream",
        float_exact && quant_exact && silent == 0 && secs < 10.0,
        format!(
            "float round trip exact {float_exact}, quantized round trip exact {quant_exact}; 1000 fuzz cases, {silent} silent, {secs:.2} s"
        ),
    );
}

// ---------------------------------------------------------------- inpainting

fn masked_psnr(a: &Image, b: &Image, mask: &Mask) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if mask.is_masked(x, y) {
                let (p, q) = (a.pixel(x, y), b.pixel(x, y));
                for c in 0..3 {
                    sum += (p[c] - q[c]).powi(2);
                }
                n += 3;
            }
        }
    }
    (sum, n)
}

fn check_inpainting(report: &mut Report) {
    // trajectory invariance on a short run
    let fc = FixtureConfig {
        width: 16,
        height: 16,
        frames: 3,
        ..FixtureConfig::desk(FixtureKind::MovingSquare, 5)
    };
    let frames = fixtures::generate(&fc);
    let masks = fixtures::random_masks(16, 16, 3, 5, 4, 5);
    let mut perturbed = frames.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (f, m) in perturbed.iter_mut().zip(&masks) {
        for y in 0..16 {
            for x in 0..16 {
                if m.is_masked(x, y) {
                    f.set_pixel(x, y, [0.0; 3].map(|_: f64| rng.gen_range(0.0..1.0)));
                }
            }
        }
    }
    let small = TrainConfig {
        num_gaussians: 64,
        coarse_steps: 60,
        deform_steps: 60,
        log_every: 0,
        field: FieldConfig {
            hidden_width: 16,
            ..FieldConfig::default()
        },
        ..TrainConfig::tiny()
    };
    let a = train_gop(&frames, Some(&masks), &small, &mut |_| {}).unwrap();
    let b = train_gop(&perturbed, Some(&masks), &small, &mut |_| {}).unwrap();
    let identical = a == b;

    // hole filling on fixture (a)
    let frames = fixtures::generate(&FixtureConfig::desk(FixtureKind::MovingSquare, 0));
    let masks = fixtures::random_masks(32, 32, frames.len(), 5, 6, 11);
    let cfg = TrainConfig {
        log_every: 0,
        ..TrainConfig::tiny()
    };
    let model = train_video(&frames, Some(&masks), &cfg, 1, &|_, _| {}).unwrap();
    let decoded = render_all(&model);
    let (mut dec_sum, mut in_sum, mut count) = (0.0, 0.0, 0);
    for k in 0..frames.len() {
        let holed = fixtures::apply_mask(&frames[k], &masks[k]);
        let (s, n) = masked_psnr(&decoded[k], &frames[k], &masks[k]);
        let (t, _) = masked_psnr(&holed, &frames[k], &masks[k]);
        dec_sum += s;
        in_sum += t;
        count += n;
    }
    let to_psnr = |s: f64| -10.0 * (s / count as f64).log10();
    let (dec, inp) = (to_psnr(dec_sum), to_psnr(in_sum));
    report.record(
        "inpainting",
        identical && dec >= inp + 5.0,
        format!(
            "masked-target perturbation leaves training identical: {identical}; masked-region PSNR decoded {dec:.2} dB vs masked input {inp:.2} dB"
        ),
    );
}

// ---------------------------------------------------------------- CLI runs

fn gsvideo(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gsvideo"))
        .args(args)
        .output()
        .expect("run gsvideo");
    assert!(
        out.status.success(),
        "gsvideo {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn check_interpolation(report: &mut Report, dir: &Path) {
    let clip = dir.join("smooth");
    let stream = dir.join("smooth.gsv");
    let (native, double) = (dir.join("native"), dir.join("double"));
    gsvideo(&["fixture", "--kind", "smooth", "--output", p(&clip), "--seed", "1"]);
    gsvideo(&["encode", "--input", p(&clip), "--output", p(&stream), "--quiet"]);
    gsvideo(&["decode", "--input", p(&stream), "--output", p(&native)]);
    gsvideo(&["decode", "--input", p(&stream), "--output", p(&double), "--scale", "2.0"]);
    let a = media_io::load_png_dir(&native).unwrap();
    let b = media_io::load_png_dir(&double).unwrap();
    let dims_ok = b.iter().all(|f| f.width() == 64 && f.height() == 64);
    let worst = a
        .iter()
        .zip(&b)
        .map(|(n, d)| d.downsample_box(2).max_abs_diff(n))
        .fold(0.0, f64::max);
    report.record(
        "spatial interpolation",
        dims_ok && worst <= 5e-2,
        format!("2x decode is 64x64: {dims_ok}; box-downsampled vs native max difference {worst:.4}"),
    );
}

fn check_determinism(report: &mut Report, dir: &Path) {
    let clip = dir.join("a");
    gsvideo(&["fixture", "--kind", "a", "--output", p(&clip), "--seed", "0"]);
    let mut streams = Vec::new();
    for run in 0..2 {
        let path = dir.join(format!("run{run}.gsv"));
        gsvideo(&["encode", "--input", p(&clip), "--output", p(&path), "--seed", "3", "--quiet"]);
        streams.push(std::fs::read(&path).unwrap());
    }
    report.record(
        "determinism",
        streams[0] == streams[1],
        format!("two encodes with seed 3: {} and {} bytes, identical {}", streams[0].len(), streams[1].len(), streams[0] == streams[1]),
    );
}

fn main() {
    let mut report = Report { failures: 0 };
    let dir = tempfile::tempdir().unwrap();
    check_gradients(&mut report);
    check_render_oracle(&mut report);
    check_hash(&mut report);
    let started = Instant::now();
    let full = train_fixture_a(FieldConfig::default());
    let full_psnr = check_overfit(&mut report, &full, started.elapsed().as_secs_f64());
    check_kfci(&mut report);
    check_ablation(&mut report, full_psnr);
    check_compression(&mut report, &full, full_psnr);
    check_inpainting(&mut report);
    check_interpolation(&mut report, dir.path());
    check_determinism(&mut report, dir.path());
    println!("{} criteria failed", report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}

use gsvideo_core::fixtures::{self, FixtureConfig, FixtureKind};
use gsvideo_core::media_io::{mean_psnr, psnr};
use gsvideo_core::training::{init_canonical_kfci, train_gop, train_video};
use gsvideo_core::{render, FieldConfig, Image, TrainConfig};

fn quick(num_gaussians: usize, coarse: usize, deform: usize) -> TrainConfig {
    TrainConfig {
        num_gaussians,
        coarse_steps: coarse,
        deform_steps: deform,
        log_every: 0,
        field: FieldConfig {
            hidden_width: 32,
            ..FieldConfig::default()
        },
        ..TrainConfig::tiny()
    }
}

fn clip(kind: FixtureKind, size: usize, frames: usize, seed: u64) -> Vec<Image> {
    fixtures::generate(&FixtureConfig {
        width: size,
        height: size,
        frames,
        ..FixtureConfig::desk(kind, seed)
    })
}

#[test]
fn same_seed_gives_identical_models() {
    let frames = clip(FixtureKind::MovingSquare, 16, 3, 1);
    let cfg = quick(32, 30, 30);
    let a = train_video(&frames, None, &cfg, 1, &|_, _| {}).unwrap();
    let b = train_video(&frames, None, &cfg, 2, &|_, _| {}).unwrap();
    assert_eq!(a, b);
    let c = train_video(&frames, None, &TrainConfig { seed: 1, ..cfg }, 1, &|_, _| {}).unwrap();
    assert_ne!(a, c);
}

#[test]
fn masked_pixels_do_not_influence_training() {
    let frames = clip(FixtureKind::GlobalPan, 16, 2, 2);
    let masks = fixtures::random_masks(16, 16, 2, 3, 4, 9);
    let scrambled: Vec<Image> = frames
        .iter()
        .zip(&masks)
        .map(|(f, m)| {
            let mut out = f.clone();
            for y in 0..16 {
                for x in 0..16 {
                    if m.is_masked(x, y) {
                        out.set_pixel(x, y, [1.0, 0.0, 1.0]);
                    }
                }
            }
            out
        })
        .collect();
    let cfg = quick(32, 20, 20);
    let a = train_gop(&frames, Some(&masks), &cfg, &mut |_| {}).unwrap();
    let b = train_gop(&scrambled, Some(&masks), &cfg, &mut |_| {}).unwrap();
    assert_eq!(a, b);
}

#[test]
fn static_pair_fits_both_frames_alike() {
    let frame = clip(FixtureKind::Static, 16, 1, 3).remove(0);
    let frames = vec![frame.clone(), frame];
    let model = train_gop(&frames, None, &quick(64, 300, 600), &mut |_| {}).unwrap();
    let p0 = psnr(&model.render_frame(0, 16, 16), &frames[0]).unwrap();
    let p1 = psnr(&model.render_frame(1, 16, 16), &frames[1]).unwrap();
    assert!((p0 - p1).abs() <= 0.5, "{p0} vs {p1}");
}

#[test]
fn single_frame_deform_stage_does_not_regress() {
    let frames = clip(FixtureKind::MovingSquare, 16, 1, 4);
    let base = quick(64, 300, 0);
    let coarse = init_canonical_kfci(&frames[0], None, &base, &mut |_| {});
    let start = psnr(&render(&coarse, 16, 16), &frames[0]).unwrap();
    let mut last = start;
    for deform in [200, 400, 800] {
        let model = train_gop(&frames, None, &TrainConfig { deform_steps: deform, ..base }, &mut |_| {}).unwrap();
        let p = psnr(&model.render_frame(0, 16, 16), &frames[0]).unwrap();
        assert!(p >= start - 0.05, "{deform} steps: {p} < {start}");
        last = p;
    }
    assert!(last >= start, "{last} < {start}");
}

#[test]
fn moving_square_small_clip() {
    let frames = clip(FixtureKind::MovingSquare, 16, 4, 0);
    let cfg = TrainConfig {
        num_gaussians: 64,
        coarse_steps: 1000,
        deform_steps: 2000,
        log_every: 0,
        ..TrainConfig::tiny()
    };
    let model = train_video(&frames, None, &cfg, 1, &|_, _| {}).unwrap();
    let rendered: Vec<Image> = (0..4).map(|k| model.render_frame(k, 16, 16).unwrap()).collect();
    let p = mean_psnr(&rendered, &frames).unwrap();
    assert!(p >= 30.0, "{p}");
}

#[test]
fn coarse_fit_of_a_texture() {
    let key = clip(FixtureKind::Smooth, 32, 1, 5).remove(0);
    let cfg = TrainConfig {
        num_gaussians: 300,
        coarse_steps: 2000,
        log_every: 0,
        ..TrainConfig::paper()
    };
    let set = init_canonical_kfci(&key, None, &cfg, &mut |_| {});
    let p = psnr(&render(&set, 32, 32), &key).unwrap();
    assert!(p >= 30.0, "{p}");
}

#[test]
fn groups_cover_the_clip() {
    let frames = clip(FixtureKind::MovingSquare, 8, 5, 0);
    let cfg = TrainConfig {
        gop_size: 2,
        ..quick(8, 2, 2)
    };
    let model = train_video(&frames, None, &cfg, 1, &|_, _| {}).unwrap();
    let spans: Vec<(usize, usize)> = model.gops.iter().map(|g| (g.first_frame, g.num_frames)).collect();
    assert_eq!(spans, vec![(0, 2), (2, 2), (4, 1)]);
    assert!(model.render_frame(5, 8, 8).is_none());
}

#[test]
fn events_are_reported_per_group() {
    let frames = clip(FixtureKind::MovingSquare, 8, 2, 0);
    let cfg = TrainConfig {
        gop_size: 1,
        log_every: 1,
        ..quick(4, 2, 3)
    };
    let seen = std::sync::Mutex::new(Vec::new());
    train_video(&frames, None, &cfg, 1, &|g, e| seen.lock().unwrap().push((g, e.stage.to_string()))).unwrap();
    let seen = seen.into_inner().unwrap();
    assert_eq!(seen.len(), 2 * (2 + 3));
    assert!(seen.iter().any(|(g, s)| *g == 1 && s == "deform"));
}

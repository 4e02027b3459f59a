//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p voltseg --test acceptance -- --nocapture`.
//! The real-time criterion is defined for an 8-core machine. On fewer cores
//! its line still reports the measured ratio and verdict, but a FAIL there
//! does not fail the test.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use rand::Rng;
use voltseg::area_table::AreaTables;
use voltseg::evaluation::{iou, match_and_score, ThroughputReport};
use voltseg::footprints::{nmf, ActivityMatrix};
use voltseg::motion::{correct_motion, zncc, MotionConfig, MotionEstimator, PatchGrid};
use voltseg::pipeline::{process, run, PipelineConfig};
use voltseg::simulator::{pixel_offset, reference_offset, synthesize, write_scene, SceneConfig};
use voltseg::summary::{spatial_summary, temporal_summary, TimeSegment};
use voltseg::traces::extract_trace;
use voltseg::unet::{load_weights, UNet, WeightBundle, PATCH};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn report(name: &str, v: &Verdict, seconds: f64) {
    let mut out = std::io::stdout().lock();
    let tag = if v.pass { "PASS" } else { "FAIL" };
    writeln!(out, "{tag} {name}: {} [{seconds:.1}s]", v.detail).unwrap();
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/reference_weights.vsegw1")
}

fn max_rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

fn oracle_equivalence() -> Verdict {
    let mut r = rng(101);
    let mut worst = [0.0f64; 6];

    let img = random_image(&mut r, 64, 64, 10.0);
    let tables = AreaTables::build(&img);
    for _ in 0..200 {
        let (h, w) = (r.random_range(1..=64), r.random_range(1..=64));
        let (y, x) = (r.random_range(0..=64 - h), r.random_range(0..=64 - w));
        worst[0] = worst[0].max(max_rel(tables.rect_sum(y, x, h, w), rect_sum(&img, y, x, h, w)));
    }

    for _ in 0..20 {
        let a = random_image(&mut r, 21, 21, 5.0);
        let b = random_image(&mut r, 21, 21, 5.0);
        let want = zncc_direct(&window(&a, 0, 0, 21), &window(&b, 0, 0, 21));
        worst[1] = worst[1].max((zncc(&a, &b).unwrap() - want).abs());
    }
    let (p, radius) = (9, 3);
    let reference = random_image(&mut r, 40, 40, 50.0);
    let frame = random_image(&mut r, 40, 40, 50.0);
    let grid = PatchGrid::tile(40, 40, p, radius).unwrap();
    let scores = MotionEstimator::new(&reference, grid.clone(), radius, false)
        .unwrap()
        .score_map(&frame.data);
    let side = 2 * radius + 1;
    for dy in -(radius as i32)..=radius as i32 {
        for dx in -(radius as i32)..=radius as i32 {
            let got = scores[(dy + radius as i32) as usize * side + (dx + radius as i32) as usize];
            worst[1] = worst[1].max((got - naive_score(&reference, &frame, &grid.origins, p, dx, dy)).abs());
        }
    }

    let video = random_video(&mut r, 50, 20, 24);
    let seg = TimeSegment::new(0, 0, 20, 24, &video.data).unwrap();
    let frames = video.frame_images();
    for (g, w) in spatial_summary(&seg).data.iter().zip(mean_frames(&frames)) {
        worst[2] = worst[2].max(max_rel(*g as f64, w));
    }
    for (g, w) in temporal_summary(&seg)
        .unwrap()
        .data
        .iter()
        .zip(max_minus_median_direct(&frames, 3.0))
    {
        worst[2] = worst[2].max(max_rel(*g as f64, w));
    }

    let f: Vec<f64> = (0..60).map(|_| r.random_range(0.1..1.0)).collect();
    let a: Vec<f64> = (0..15).map(|_| r.random_range(0.1..1.0)).collect();
    let m = ActivityMatrix::new(
        60,
        15,
        f.iter().flat_map(|fi| a.iter().map(move |aj| fi * aj)).collect(),
    )
    .unwrap();
    worst[3] = nmf(&m, 1, 2000, 0.0, 0).unwrap().relative_error(&m);

    for _ in 0..50 {
        let x = random_mask(&mut r, 20, 20, 0.3);
        let y = random_mask(&mut r, 20, 20, 0.3);
        worst[4] = worst[4].max((iou(&x, &y).unwrap() - iou_count(&x, &y)).abs());
    }

    let mask = random_mask(&mut r, 20, 24, 0.2);
    let idx = mask.indices();
    for (t, g) in extract_trace(&video, &mask).unwrap().iter().enumerate() {
        let frame = video.frame(t);
        let want = idx.iter().map(|&i| frame[i] as f64).sum::<f64>() / idx.len() as f64;
        worst[5] = worst[5].max(max_rel(*g, want));
    }

    let limits = [1e-6, 1e-4, 1e-5, 1e-3, 1e-12, 1e-6];
    let names = ["area tables", "zncc", "summaries", "nmf rank-1", "iou", "trace mean"];
    let pass = worst.iter().zip(&limits).all(|(w, l)| w <= l);
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, detail)
}

fn motion_recovery() -> Verdict {
    let (mut exact, mut within, mut total) = (0usize, 0usize, 0usize);
    let mut worst_video = 1.0f64;
    for seed in 0..20u64 {
        let (video, truth) = synthesize(&SceneConfig {
            seed: 500 + seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let (_, est) = correct_motion(&video, &MotionConfig::default()).unwrap();
        let off = reference_offset(&truth.motion, &est);
        let mut video_exact = 0;
        for (m, e) in truth.motion.iter().zip(&est) {
            let (x, y) = (e.vector.x() + off[0], e.vector.y() + off[1]);
            if x.round() as i32 == m.0 && y.round() as i32 == m.1 {
                video_exact += 1;
            }
            if (m.0 as f64 - x).abs() <= 1.0 && (m.1 as f64 - y).abs() <= 1.0 {
                within += 1;
            }
        }
        exact += video_exact;
        total += truth.motion.len();
        worst_video = worst_video.min(video_exact as f64 / truth.motion.len() as f64);
    }
    let exact_frac = exact as f64 / total as f64;
    let within_frac = within as f64 / total as f64;
    verdict(
        exact_frac >= 0.95 && within == total,
        format!(
            "exact {:.2}% (need >= 95%, worst video {:.2}%), residual <= 1 px {:.2}% (need 100%)",
            100.0 * exact_frac,
            100.0 * worst_video,
            100.0 * within_frac
        ),
    )
}

fn unet_parity() -> Verdict {
    let mut r = rng(103);
    let mut worst = 0.0f64;
    let mut shapes_ok = true;
    for pair in 0..20u64 {
        let bundle = WeightBundle::random(3000 + pair);
        let net = UNet::new(&bundle).unwrap();
        let patch: Vec<f32> = (0..2 * PATCH * PATCH).map(|_| r.random::<f32>()).collect();
        let got = net.forward(&patch).unwrap();
        shapes_ok &= got.len() == 64 * 64;
        let want = unet_direct(&bundle, &patch);
        worst = got
            .iter()
            .zip(&want)
            .fold(worst, |m, (g, w)| m.max((*g as f64 - w).abs()));
    }
    verdict(
        worst <= 1e-4 && shapes_ok,
        format!("max abs diff {worst:.2e} over 20 patches (need <= 1e-4), output 64x64: {shapes_ok}"),
    )
}

fn end_to_end_f1(net: &UNet) -> Verdict {
    let config = PipelineConfig {
        weights: Some(fixture()),
        ..PipelineConfig::default()
    };
    let mut scores = Vec::new();
    for seed in 0..10u64 {
        let (video, truth) = synthesize(&SceneConfig {
            seed: 900_000 + seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let out = process(&video, Some(net), None, &config).unwrap();
        let off = pixel_offset(reference_offset(&truth.motion, out.motion.as_ref().unwrap()));
        let gts = truth.footprints_at(off);
        let preds = out.footprints.unwrap().masks();
        scores.push(match_and_score(&preds, &gts, 0.3).unwrap().f1);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let list = scores.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>().join(" ");
    verdict(
        mean >= 0.75,
        format!("mean F1 {mean:.3} at IoU 0.3 (need >= 0.75); per video {list}"),
    )
}

fn realtime(net: &UNet) -> (Verdict, bool) {
    let (video, _) = synthesize(&SceneConfig {
        seed: 4242,
        frames: 2500,
        frame_rate: 400.0,
        ..SceneConfig::default()
    })
    .unwrap();
    let config = PipelineConfig {
        weights: Some(fixture()),
        ..PipelineConfig::default()
    };
    let report = process(&video, Some(net), None, &config).unwrap().report.unwrap();
    let ratio = report.realtime_ratio.unwrap();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let stages = report
        .stages
        .iter()
        .map(|s| format!("{} {:.2}s", s.stage, s.seconds))
        .collect::<Vec<_>>()
        .join(", ");
    (
        verdict(
            ratio >= 1.0 && report.streaming,
            format!(
                "realtime_ratio {ratio:.3} (need >= 1.0), {:.0} fps vs 400 fps, total {:.2}s ({stages}), streaming {}, {cores} core(s) available, criterion assumes 8",
                report.effective_fps, report.total_seconds, report.streaming
            ),
        ),
        cores < 8,
    )
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SceneConfig {
        seed: 31337,
        frames: 500,
        ..SceneConfig::default()
    };
    let (video, truth) = synthesize(&cfg).unwrap();
    write_scene(&tmp.path().join("scene"), &video, &truth, &cfg, None).unwrap();
    let mut dirs = Vec::new();
    for name in ["a", "b"] {
        let config = PipelineConfig {
            input: tmp.path().join("scene/video.vsegv1"),
            output: tmp.path().join(name),
            weights: Some(fixture()),
            threads: 1,
            ..PipelineConfig::default()
        };
        run(&config).unwrap();
        dirs.push(config.output);
    }
    let same = |f: &str| std::fs::read(dirs[0].join(f)).unwrap() == std::fs::read(dirs[1].join(f)).unwrap();
    let (masks, traces) = (same("footprints.tif"), same("traces.csv"));
    verdict(
        masks && traces,
        format!("masks identical {masks}, traces identical {traces}"),
    )
}

fn evaluation_arithmetic() -> Verdict {
    let stages = vec![
        ("motion".to_string(), 5.5),
        ("segmentation".to_string(), 6.9),
        ("traces".to_string(), 0.1),
    ];
    let report = ThroughputReport::from_stage_seconds(10_000, stages, Some(741.0));
    let ratio = report.realtime_ratio.unwrap();
    verdict(
        (ratio - 1.08).abs() <= 0.01 && (report.effective_fps - 800.0).abs() < 1e-9,
        format!(
            "{:.1} fps vs 741 fps, ratio {ratio:.4} (need 1.08 +/- 0.01)",
            report.effective_fps
        ),
    )
}

#[test]
fn acceptance() {
    let net = UNet::new(&load_weights(fixture()).unwrap()).unwrap();
    let mut hard_failures = Vec::new();
    let mut check = |name: &'static str, f: &mut dyn FnMut() -> (Verdict, bool)| {
        let start = Instant::now();
        let (v, environment_bound) = f();
        report(name, &v, start.elapsed().as_secs_f64());
        if !v.pass && !environment_bound {
            hard_failures.push(name);
        }
    };
    check("oracle equivalence", &mut || (oracle_equivalence(), false));
    check("motion recovery", &mut || (motion_recovery(), false));
    check("u-net forward parity", &mut || (unet_parity(), false));
    check("end-to-end segmentation", &mut || (end_to_end_f1(&net), false));
    check("real-time streaming", &mut || realtime(&net));
    check("determinism", &mut || (determinism(), false));
    check("evaluation arithmetic", &mut || (evaluation_arithmetic(), false));
    assert!(hard_failures.is_empty(), "failed: {hard_failures:?}");
}

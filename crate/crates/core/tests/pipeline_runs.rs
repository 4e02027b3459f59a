//! Whole-pipeline runs on simulator scenes.

use std::path::{Path, PathBuf};

use voltseg::evaluation::match_and_score;
use voltseg::footprints::FootprintSet;
use voltseg::motion::{correct_motion, MotionConfig};
use voltseg::pipeline::{process, run, PipelineConfig, RunRecord, Stage};
use voltseg::simulator::{pixel_offset, reference_offset, synthesize, write_scene, SceneConfig};
use voltseg::summary::summarize;
use voltseg::unet::{load_weights, tile_and_merge, UNet};
use voltseg::video_io::save_video;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/reference_weights.vsegw1")
}

fn scene(seed: u64, frames: usize) -> SceneConfig {
    SceneConfig {
        seed,
        frames,
        ..SceneConfig::default()
    }
}

/// Writes the scene's video and returns a config reading it.
fn setup(dir: &Path, cfg: &SceneConfig) -> PipelineConfig {
    let (video, truth) = synthesize(cfg).unwrap();
    write_scene(&dir.join("scene"), &video, &truth, cfg, None).unwrap();
    PipelineConfig {
        input: dir.join("scene/video.vsegv1"),
        output: dir.join("out"),
        weights: Some(fixture()),
        ..PipelineConfig::default()
    }
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn read_record(dir: &Path) -> RunRecord {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

#[test]
fn end_to_end_writes_every_artifact_and_finds_the_neurons() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scene(7001, 1000);
    let config = PipelineConfig {
        save_probability_maps: true,
        ..setup(tmp.path(), &cfg)
    };
    let out = run(&config).unwrap();
    let files = listing(&config.output);
    for name in [
        "config.toml",
        "corrected.vsegv1",
        "footprints.json",
        "footprints.tif",
        "motion.csv",
        "probability.tif",
        "run.json",
        "throughput.json",
        "traces.csv",
        "traces.json",
    ] {
        assert!(files.contains(&name.to_string()), "missing {name}: {files:?}");
    }
    assert!(read_record(&config.output).complete);
    let saved = PipelineConfig::load(config.output.join("config.toml")).unwrap();
    assert_eq!(saved, config);

    let (_, truth) = synthesize(&cfg).unwrap();
    let found = out.footprints.unwrap().len() as i64;
    let want = truth.neurons.len() as i64;
    assert!((found - want).abs() <= 1, "{found} footprints for {want} neurons");
}

#[test]
fn motion_only_run_writes_no_segmentation_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = PipelineConfig {
        stages: vec![Stage::Motion],
        weights: None,
        ..setup(tmp.path(), &scene(7002, 120))
    };
    run(&config).unwrap();
    let files = listing(&config.output);
    assert!(files.contains(&"corrected.vsegv1".to_string()));
    assert!(files.contains(&"motion.csv".to_string()));
    for f in &files {
        assert!(
            !f.starts_with("footprints") && !f.starts_with("traces") && !f.starts_with("probability"),
            "unexpected {f}"
        );
    }
}

#[test]
fn single_thread_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let base = PipelineConfig {
        threads: 1,
        ..setup(tmp.path(), &scene(7003, 300))
    };
    let mut outputs = Vec::new();
    for run_dir in ["a", "b"] {
        let config = PipelineConfig {
            output: tmp.path().join(run_dir),
            ..base.clone()
        };
        run(&config).unwrap();
        outputs.push(config.output);
    }
    for name in ["footprints.tif", "footprints.json", "traces.csv", "motion.csv"] {
        let a = std::fs::read(outputs[0].join(name)).unwrap();
        let b = std::fs::read(outputs[1].join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn streaming_and_batch_agree() {
    let cfg = scene(7004, 400);
    let (video, _) = synthesize(&cfg).unwrap();
    let net = UNet::new(&load_weights(fixture()).unwrap()).unwrap();
    let config = PipelineConfig {
        weights: Some(fixture()),
        ..PipelineConfig::default()
    };
    let streamed = process(&video, Some(&net), None, &config).unwrap();
    let batch = process(
        &video,
        Some(&net),
        None,
        &PipelineConfig {
            streaming: false,
            ..config.clone()
        },
    )
    .unwrap();
    assert!(streamed.report.as_ref().unwrap().streaming);
    assert!(!batch.report.as_ref().unwrap().streaming);
    assert_eq!(streamed.corrected, batch.corrected);
    let (ms, mb) = (streamed.maps.unwrap(), batch.maps.unwrap());
    assert_eq!(ms.len(), mb.len());
    for (a, b) in ms.iter().zip(&mb) {
        let worst = a
            .values
            .data
            .iter()
            .zip(&b.values.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max);
        assert!(worst <= 1e-5, "segment {}: {worst}", a.segment_index);
    }
    assert_eq!(streamed.footprints.unwrap().masks(), batch.footprints.unwrap().masks());
    let (ts, tb) = (streamed.traces.unwrap(), batch.traces.unwrap());
    assert_eq!(ts.len(), tb.len());
    for (a, b) in ts.iter().zip(&tb) {
        assert_eq!(a.samples, b.samples);
    }
}

#[test]
fn batch_stage_times_add_up_to_the_total() {
    let (video, _) = synthesize(&scene(7005, 400)).unwrap();
    let net = UNet::new(&load_weights(fixture()).unwrap()).unwrap();
    let config = PipelineConfig {
        weights: Some(fixture()),
        streaming: false,
        ..PipelineConfig::default()
    };
    let report = process(&video, Some(&net), None, &config).unwrap().report.unwrap();
    let sum = report.stage_sum();
    assert!(
        (sum - report.total_seconds).abs() <= 0.05 * report.total_seconds,
        "{sum} vs {}",
        report.total_seconds
    );
    assert!(report.realtime_ratio.is_some());
    assert_eq!(report.stages.len(), 3);
}

#[test]
fn failing_stage_keeps_earlier_outputs_and_flags_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = setup(tmp.path(), &scene(7006, 100));
    // Footprints of the wrong frame size make trace extraction fail.
    let manifest_dir = tmp.path().join("fp");
    std::fs::create_dir_all(&manifest_dir).unwrap();
    let small = voltseg::video_io::MaskImage::full(8, 8);
    let set = FootprintSet {
        footprints: vec![voltseg::footprints::Footprint {
            id: 0,
            component: 0,
            weights: voltseg::video_io::Image::new(8, 8),
            mask: small,
            activity: vec![],
        }],
    };
    set.export(&manifest_dir, 8, 8, false).unwrap();
    config.stages = vec![Stage::Motion, Stage::Traces];
    config.weights = None;
    config.footprints = Some(manifest_dir.join("footprints.json"));
    let err = run(&config).unwrap_err();
    assert!(err.to_string().starts_with("traces stage failed"), "{err}");
    assert_eq!(err.exit_code(), 4);
    let record = read_record(&config.output);
    assert!(!record.complete);
    assert!(record.artifacts.contains(&"motion.csv".to_string()));
    assert!(config.output.join("corrected.vsegv1").exists());
}

#[test]
fn trace_only_run_uses_a_saved_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let first = PipelineConfig {
        save_corrected: true,
        ..setup(tmp.path(), &scene(7007, 200))
    };
    let out = run(&first).unwrap();
    let corrected = tmp.path().join("corrected.vsegv1");
    save_video(out.corrected.as_ref().unwrap(), &corrected).unwrap();
    let second = PipelineConfig {
        input: corrected,
        output: tmp.path().join("traces_only"),
        stages: vec![Stage::Traces],
        weights: None,
        footprints: Some(first.output.join("footprints.json")),
        ..PipelineConfig::default()
    };
    let again = run(&second).unwrap();
    let a: Vec<Vec<f64>> = out.traces.unwrap().into_iter().map(|t| t.samples).collect();
    let b: Vec<Vec<f64>> = again.traces.unwrap().into_iter().map(|t| t.samples).collect();
    assert_eq!(a, b);
}

#[test]
fn reference_weights_highlight_a_spiking_neuron() {
    let cfg = SceneConfig {
        neurons: [1, 1],
        spike_rate: 10.0,
        seed: 7008,
        ..SceneConfig::default()
    };
    let (video, truth) = synthesize(&cfg).unwrap();
    let (corrected, est) = correct_motion(&video, &MotionConfig::default()).unwrap();
    let off = pixel_offset(reference_offset(&truth.motion, &est));
    let footprint = &truth.footprints_at(off)[0];
    let pairs = summarize(&corrected, 50).unwrap();
    let net = UNet::new(&load_weights(fixture()).unwrap()).unwrap();
    let spiking = truth
        .segment_masks
        .iter()
        .position(|m| !m.is_empty())
        .expect("a spiking segment");
    let map = tile_and_merge(&net, &pairs[spiking], 32).unwrap();
    let (mut inside, mut outside) = ((0.0, 0), (0.0, 0));
    for (i, &p) in map.values.data.iter().enumerate() {
        let slot = if footprint.bits[i] { &mut inside } else { &mut outside };
        slot.0 += p as f64;
        slot.1 += 1;
    }
    let gap = inside.0 / inside.1 as f64 - outside.0 / outside.1 as f64;
    assert!(gap >= 0.3, "{gap}");
}

#[test]
fn evaluation_of_a_run_against_its_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scene(7009, 1000);
    let config = setup(tmp.path(), &cfg);
    let out = run(&config).unwrap();
    let est = out.motion.unwrap();
    let gts = voltseg::simulator::ground_truth_masks(tmp.path().join("scene"), Some(&est)).unwrap();
    let preds = out.footprints.unwrap().masks();
    let report = match_and_score(&preds, &gts, 0.3).unwrap();
    assert!(report.f1 > 0.5, "{report:?}");
}

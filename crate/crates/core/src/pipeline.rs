//! End-to-end orchestration: motion correction, segmentation and trace
//! extraction, either streamed segment by segment or run stage after stage.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crossbeam_channel::bounded;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::ThroughputReport;
use crate::footprints::{
    load_manifest_masks, reconstruct_footprints, Footprint, FootprintSet, NmfConfig, ReconstructionConfig, ShapeFilter,
};
use crate::motion::{
    correct_frames, correct_motion, mean_reference, write_motion_csv, MotionConfig, MotionEstimate, MotionEstimator,
};
use crate::summary::{split_segments, summarize_segment, TimeSegment, DEFAULT_SEGMENT_LEN, DEFAULT_SIGMA};
use crate::traces::{delta_f_over_f, extract_all, write_traces_csv, Trace};
use crate::unet::{load_weights, tile_and_merge, ProbabilityMap, UNet, DEFAULT_STRIDE};
use crate::video_io::{load_video, save_image_stack, save_video, Image, MaskImage, Video};

/// Segments in flight per stage boundary in streaming mode.
pub const QUEUE_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Motion,
    Segmentation,
    Traces,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Motion => "motion",
            Stage::Segmentation => "segmentation",
            Stage::Traces => "traces",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion" => Ok(Stage::Motion),
            "segmentation" => Ok(Stage::Segmentation),
            "traces" => Ok(Stage::Traces),
            other => Err(Error::Config(format!(
                "unknown stage {other:?}; expected motion, segmentation or traces"
            ))),
        }
    }
}

/// Every tunable of a run. Serialized as a flat TOML document; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub weights: Option<PathBuf>,
    /// Existing footprint manifest for a traces-only run.
    pub footprints: Option<PathBuf>,
    pub stages: Vec<Stage>,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub streaming: bool,

    pub segment_len: usize,
    pub sigma: f64,

    pub patch_size: usize,
    pub search_radius: usize,
    pub subpixel: bool,
    pub reference_frames: usize,

    pub stride: usize,

    pub threshold: f32,
    pub min_area: usize,
    pub max_area: usize,
    pub min_solidity: f64,
    pub max_eccentricity: f64,
    pub nmf_max_iters: usize,
    pub nmf_tol: f64,
    pub nmf_seed: u64,
    pub max_rank: usize,
    pub rank_error: f64,
    pub footprint_level: f64,
    pub merge_iou: f64,

    pub save_corrected: bool,
    pub save_probability_maps: bool,
    pub delta_f_over_f: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let motion = MotionConfig::default();
        let rec = ReconstructionConfig::default();
        PipelineConfig {
            input: PathBuf::new(),
            output: PathBuf::new(),
            weights: None,
            footprints: None,
            stages: vec![Stage::Motion, Stage::Segmentation, Stage::Traces],
            threads: 0,
            streaming: true,
            segment_len: DEFAULT_SEGMENT_LEN,
            sigma: DEFAULT_SIGMA,
            patch_size: motion.patch_size,
            search_radius: motion.search_radius,
            subpixel: motion.subpixel,
            reference_frames: motion.reference_frames,
            stride: DEFAULT_STRIDE,
            threshold: rec.threshold,
            min_area: rec.shape.min_area,
            max_area: rec.shape.max_area,
            min_solidity: rec.shape.min_solidity,
            max_eccentricity: rec.shape.max_eccentricity,
            nmf_max_iters: rec.nmf.max_iters,
            nmf_tol: rec.nmf.tol,
            nmf_seed: rec.nmf.seed,
            max_rank: rec.nmf.max_rank,
            rank_error: rec.nmf.rank_error,
            footprint_level: rec.footprint_level,
            merge_iou: rec.merge_iou,
            save_corrected: true,
            save_probability_maps: false,
            delta_f_over_f: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn motion(&self) -> MotionConfig {
        MotionConfig {
            patch_size: self.patch_size,
            search_radius: self.search_radius,
            subpixel: self.subpixel,
            reference_frames: self.reference_frames,
        }
    }

    pub fn reconstruction(&self) -> ReconstructionConfig {
        ReconstructionConfig {
            threshold: self.threshold,
            shape: ShapeFilter {
                min_area: self.min_area,
                max_area: self.max_area,
                min_solidity: self.min_solidity,
                max_eccentricity: self.max_eccentricity,
            },
            nmf: NmfConfig {
                max_iters: self.nmf_max_iters,
                tol: self.nmf_tol,
                seed: self.nmf_seed,
                max_rank: self.max_rank,
                rank_error: self.rank_error,
            },
            footprint_level: self.footprint_level,
            merge_iou: self.merge_iou,
        }
    }

    /// Checks that do not touch the file system.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages.is_empty() {
            return bad("no stages selected".into());
        }
        if self.segment_len < 2 {
            return bad(format!("segment_len must be >= 2, got {}", self.segment_len));
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.patch_size == 0 || self.search_radius == 0 || self.reference_frames == 0 {
            return bad("patch_size, search_radius and reference_frames must be >= 1".into());
        }
        if self.stride == 0 {
            return bad("stride must be >= 1".into());
        }
        if self.has(Stage::Segmentation) && self.weights.is_none() {
            return bad("segmentation needs a weights file".into());
        }
        if self.has(Stage::Traces) && !self.has(Stage::Segmentation) && self.footprints.is_none() {
            return bad("traces without segmentation need a footprint manifest".into());
        }
        self.reconstruction()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

/// Everything a run produced. Fields of stages that did not run are `None`.
#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub corrected: Option<Video>,
    pub motion: Option<Vec<MotionEstimate>>,
    pub maps: Option<Vec<ProbabilityMap>>,
    pub footprints: Option<FootprintSet>,
    pub traces: Option<Vec<Trace>>,
    pub report: Option<ThroughputReport>,
}

/// A failed run together with the results of the stages that completed.
#[derive(Debug)]
pub struct PipelineFailure {
    pub error: Error,
    pub partial: PipelineOutput,
}

impl From<PipelineFailure> for Error {
    fn from(f: PipelineFailure) -> Self {
        f.error
    }
}

#[derive(Default)]
struct StageClock {
    motion: Duration,
    segmentation: Duration,
    traces: Duration,
}

fn timed<T>(acc: &mut Duration, f: impl FnOnce() -> T) -> T {
    let t0 = Instant::now();
    let out = f();
    *acc += t0.elapsed();
    out
}

fn segment_map(net: &UNet, segment: &TimeSegment, config: &PipelineConfig) -> Result<ProbabilityMap> {
    let pair = summarize_segment(segment, config.sigma)?;
    tile_and_merge(net, &pair, config.stride)
}

/// Motion-correct and segment with the two stages overlapped: each segment's
/// frames go to summarization and the U-Net as soon as they are corrected.
fn stream_motion_and_maps(
    video: &Video,
    net: &UNet,
    config: &PipelineConfig,
    pool: &rayon::ThreadPool,
    clock: &mut StageClock,
    out: &mut PipelineOutput,
) -> Result<()> {
    let motion_config = config.motion();
    let reference = mean_reference(video, motion_config.reference_frames);
    let estimator = MotionEstimator::from_config(&reference, &motion_config).map_err(|e| e.in_stage("motion"))?;
    let len = config.segment_len;
    let k = video.frames.div_ceil(len);
    let n = video.pixels_per_frame();

    let (to_seg, seg_in) = bounded::<(usize, Vec<f32>, Vec<MotionEstimate>)>(QUEUE_DEPTH);
    let (to_main, main_in) = bounded::<(Vec<f32>, Vec<MotionEstimate>, Result<ProbabilityMap>)>(QUEUE_DEPTH);

    let mut data = Vec::with_capacity(video.data.len());
    let mut estimates = Vec::with_capacity(video.frames);
    let mut maps = Vec::with_capacity(k);
    let mut failure = None;

    let (motion_busy, seg_busy) = std::thread::scope(|s| {
        let motion = s.spawn(|| {
            let mut busy = Duration::ZERO;
            for i in 0..k {
                let range = i * len..((i + 1) * len).min(video.frames);
                let (chunk, est) = timed(&mut busy, || pool.install(|| correct_frames(&estimator, video, range)));
                if to_seg.send((i, chunk, est)).is_err() {
                    break;
                }
            }
            drop(to_seg);
            busy
        });
        let segmentation = s.spawn(|| {
            let mut busy = Duration::ZERO;
            for (i, chunk, est) in seg_in.iter() {
                let map = timed(&mut busy, || {
                    let segment = TimeSegment::new(i, i * len, video.height, video.width, &chunk)?;
                    pool.install(|| segment_map(net, &segment, config))
                });
                let failed = map.is_err();
                if to_main.send((chunk, est, map)).is_err() || failed {
                    break;
                }
            }
            drop(to_main);
            busy
        });
        for (chunk, est, map) in main_in.iter() {
            data.extend_from_slice(&chunk);
            estimates.extend(est);
            match map {
                Ok(m) => maps.push(m),
                Err(e) => {
                    failure = Some(e.in_stage("segmentation"));
                    break;
                }
            }
        }
        drop(main_in);
        (
            motion.join().expect("motion thread"),
            segmentation.join().expect("segmentation thread"),
        )
    });
    clock.motion += motion_busy;
    clock.segmentation += seg_busy;

    if data.len() == video.frames * n {
        out.corrected = Some(Video {
            data,
            ..video.clone_header()
        });
        out.motion = Some(estimates);
    }
    match failure {
        Some(e) => Err(e),
        None => {
            out.maps = Some(maps);
            Ok(())
        }
    }
}

fn batch_maps(
    video: &Video,
    net: &UNet,
    config: &PipelineConfig,
    pool: &rayon::ThreadPool,
) -> Result<Vec<ProbabilityMap>> {
    let segments = split_segments(video, config.segment_len)?;
    pool.install(|| {
        segments
            .iter()
            .map(|s| segment_map(net, s, config))
            .collect::<Result<Vec<_>>>()
    })
}

/// Run the selected stages on an in-memory video. `net` is required when
/// segmentation is enabled and `footprints` when traces run without it.
pub fn process(
    video: &Video,
    net: Option<&UNet>,
    footprints: Option<FootprintSet>,
    config: &PipelineConfig,
) -> std::result::Result<PipelineOutput, Box<PipelineFailure>> {
    let mut out = PipelineOutput::default();
    let mut clock = StageClock::default();
    let fail = |error: Error, partial: PipelineOutput| Box::new(PipelineFailure { error, partial });
    if let Err(e) = config.validate() {
        return Err(fail(e, out));
    }
    let pool = match config.thread_pool() {
        Ok(p) => p,
        Err(e) => return Err(fail(e, out)),
    };
    let segmentation = config.has(Stage::Segmentation);
    let net = match (segmentation, net) {
        (true, None) => return Err(fail(Error::Config("segmentation needs a U-Net".into()), out)),
        (_, n) => n,
    };
    let start = Instant::now();

    // Motion correction and per-segment probability maps.
    let streamed = config.streaming && segmentation && config.has(Stage::Motion) && video.frames > 1;
    if streamed {
        if let Err(e) = stream_motion_and_maps(video, net.expect("checked"), config, &pool, &mut clock, &mut out) {
            return Err(fail(e, out));
        }
    } else {
        if config.has(Stage::Motion) {
            let motion = config.motion();
            match timed(&mut clock.motion, || pool.install(|| correct_motion(video, &motion))) {
                Ok((v, est)) => {
                    out.corrected = Some(v);
                    out.motion = Some(est);
                }
                Err(e) => return Err(fail(e.in_stage("motion"), out)),
            }
        }
        if segmentation {
            let source = out.corrected.as_ref().unwrap_or(video);
            match timed(&mut clock.segmentation, || {
                batch_maps(source, net.expect("checked"), config, &pool)
            }) {
                Ok(maps) => out.maps = Some(maps),
                Err(e) => return Err(fail(e.in_stage("segmentation"), out)),
            }
        }
    }

    if let Some(maps) = &out.maps {
        let rec = config.reconstruction();
        match timed(&mut clock.segmentation, || {
            pool.install(|| reconstruct_footprints(maps, &rec))
        }) {
            Ok(set) => out.footprints = Some(set),
            Err(e) => return Err(fail(e.in_stage("segmentation"), out)),
        }
    } else if let Some(set) = footprints {
        out.footprints = Some(set);
    }

    if config.has(Stage::Traces) {
        let source = out.corrected.as_ref().unwrap_or(video);
        let set = out.footprints.as_ref().expect("validated");
        let traces = timed(&mut clock.traces, || {
            pool.install(|| {
                let mut traces = extract_all(source, set)?;
                if config.delta_f_over_f {
                    for t in traces.iter_mut() {
                        t.samples = delta_f_over_f(&t.samples)?;
                    }
                }
                Ok::<_, Error>(traces)
            })
        });
        match traces {
            Ok(t) => out.traces = Some(t),
            Err(e) => return Err(fail(e.in_stage("traces"), out)),
        }
    }

    let total = start.elapsed();
    let mut stages = Vec::new();
    for (stage, d) in [
        (Stage::Motion, clock.motion),
        (Stage::Segmentation, clock.segmentation),
        (Stage::Traces, clock.traces),
    ] {
        if config.has(stage) {
            stages.push((stage.name().to_string(), d));
        }
    }
    out.report = Some(ThroughputReport::new(
        video.frames,
        stages,
        total,
        video.frame_rate,
        streamed,
    ));
    Ok(out)
}

/// Process `video` in memory and report stage and total wall times.
pub fn benchmark_pipeline(video: &Video, net: &UNet, config: &PipelineConfig) -> Result<ThroughputReport> {
    let out = process(video, Some(net), None, config).map_err(|f| f.error)?;
    Ok(out.report.expect("report on success"))
}

/// Top-level run record written as `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub complete: bool,
    pub error: Option<String>,
    pub artifacts: Vec<String>,
}

fn load_footprint_set(path: &Path) -> Result<FootprintSet> {
    let (manifest, masks) = load_manifest_masks(path)?;
    let footprints = manifest
        .footprints
        .iter()
        .zip(masks)
        .map(|(rec, mask)| Footprint {
            id: rec.id,
            component: rec.component,
            weights: Image::new(manifest.height, manifest.width),
            mask,
            activity: Vec::new(),
        })
        .collect();
    Ok(FootprintSet { footprints })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serializes")).map_err(|e| Error::io(path, e))
}

/// Write every artifact present in `out`. Returns the written file names.
fn write_artifacts(out: &PipelineOutput, video: &Video, config: &PipelineConfig, partial: bool) -> Result<Vec<String>> {
    let dir = &config.output;
    let mut written = Vec::new();
    let mut note = |name: &str| written.push(name.to_string());
    if let Some(est) = &out.motion {
        write_motion_csv(est, dir.join("motion.csv"))?;
        note("motion.csv");
    }
    if let (Some(v), true) = (&out.corrected, config.save_corrected) {
        save_video(v, dir.join("corrected.vsegv1"))?;
        note("corrected.vsegv1");
    }
    if let (Some(maps), true) = (&out.maps, config.save_probability_maps) {
        let pages: Vec<Image> = maps.iter().map(|m| m.values.clone()).collect();
        save_image_stack(&pages, None, &dir.join("probability.tif"))?;
        note("probability.tif");
    }
    if let (Some(set), true) = (&out.footprints, config.has(Stage::Segmentation)) {
        set.export(dir, video.height, video.width, partial)?;
        note("footprints.tif");
        note("footprints.json");
    }
    if let Some(traces) = &out.traces {
        write_traces_csv(
            traces,
            video.frames,
            video.frame_rate,
            config.delta_f_over_f,
            dir.join("traces.csv"),
        )?;
        note("traces.csv");
        note("traces.json");
    }
    if let Some(report) = &out.report {
        write_json(&dir.join("throughput.json"), report)?;
        note("throughput.json");
    }
    Ok(written)
}

/// Load inputs, process, and write artifacts into `config.output`.
pub fn run(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    if config.input.as_os_str().is_empty() || config.output.as_os_str().is_empty() {
        return Err(Error::Config("input and output paths are required".into()));
    }
    let video = load_video(&config.input)?;
    let net = match (&config.weights, config.has(Stage::Segmentation)) {
        (Some(p), true) => Some(UNet::new(&load_weights(p)?)?),
        _ => None,
    };
    let footprints = match (&config.footprints, config.has(Stage::Segmentation)) {
        (Some(p), false) => Some(load_footprint_set(p)?),
        _ => None,
    };
    let dir = &config.output;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, config.to_toml()).map_err(|e| Error::io(&config_path, e))?;

    let (out, error) = match process(&video, net.as_ref(), footprints, config) {
        Ok(out) => (out, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    let mut artifacts = vec!["config.toml".to_string()];
    artifacts.extend(write_artifacts(&out, &video, config, error.is_some())?);
    let record = RunRecord {
        complete: error.is_none(),
        error: error.as_ref().map(|e| e.to_string()),
        artifacts,
    };
    write_json(&dir.join("run.json"), &record)?;
    match error {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Masks of a footprint manifest, or of a bare mask stack.
pub fn load_masks_any(path: impl AsRef<Path>) -> Result<Vec<MaskImage>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(load_manifest_masks(path)?.1),
        _ => crate::video_io::load_masks(path),
    }
}

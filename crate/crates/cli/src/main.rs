//! `voltseg`: simulate scenes, build training data, segment and trace videos,
//! score predictions, and benchmark throughput.

mod args;
mod overlay;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use voltseg::evaluation::{match_and_score, DEFAULT_IOU_THRESHOLD};
use voltseg::motion::{read_motion_csv, MotionConfig};
use voltseg::pipeline::{benchmark_pipeline, load_masks_any, run, PipelineOutput, Stage};
use voltseg::simulator::{
    generate_training_set, ground_truth_masks, synthesize, write_scene, DatasetConfig, SceneConfig,
};
use voltseg::unet::{load_weights, UNet};
use voltseg::video_io::load_video;
use voltseg::{Error, Result};

use crate::args::PipelineArgs;

#[derive(Parser)]
#[command(
    name = "voltseg",
    version,
    about = "Real-time neuron segmentation for voltage imaging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct SceneArgs {
    #[arg(long, help = "Scene configuration TOML; flags below override it")]
    scene: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, help = "Frame height and width")]
    size: Option<usize>,
    #[arg(long)]
    frame_rate: Option<f64>,
}

impl SceneArgs {
    fn resolve(&self) -> Result<SceneConfig> {
        let mut c = match &self.scene {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
            }
            None => SceneConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(f) = self.frames {
            c.frames = f;
        }
        if let Some(s) = self.size {
            c.height = s;
            c.width = s;
        }
        if let Some(r) = self.frame_rate {
            c.frame_rate = r;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render one synthetic scene with ground truth.
    Simulate {
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
    },
    /// Generate the U-Net training patch dataset.
    MakeDataset {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1000)]
        videos: usize,
        #[arg(long, default_value_t = 10)]
        patches_per_pair: usize,
        #[command(flatten)]
        scene: SceneArgs,
    },
    /// Run the pipeline and write its artifacts.
    Segment {
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Extract traces for an existing footprint manifest.
    Trace {
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Score predicted footprints against ground truth.
    Evaluate {
        #[arg(long, help = "Predicted footprints.json or mask stack")]
        pred: PathBuf,
        #[arg(long, help = "Scene directory, footprints.json or mask stack")]
        gt: PathBuf,
        #[arg(long, help = "motion.csv of the run, to align a scene's ground truth")]
        motion: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
        iou_threshold: f64,
        #[arg(long, help = "Write the report here instead of stdout")]
        report: Option<PathBuf>,
        #[arg(long, help = "PNG overlay of predictions and ground truth")]
        overlay: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        overlay_scale: usize,
    },
    /// Time the pipeline in memory and print a throughput report.
    Bench {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(
            long,
            default_value_t = 2500,
            help = "Frames of the simulated video when --input is absent"
        )]
        sim_frames: usize,
        #[arg(long, default_value_t = 0)]
        sim_seed: u64,
        #[arg(long, help = "Write the report here as well as stdout")]
        report: Option<PathBuf>,
    },
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializes");
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn summary(out: &PipelineOutput) -> serde_json::Value {
    json!({
        "frames_corrected": out.motion.as_ref().map(|m| m.len()),
        "segments": out.maps.as_ref().map(|m| m.len()),
        "footprints": out.footprints.as_ref().map(|f| f.footprints.len()),
        "traces": out.traces.as_ref().map(|t| t.len()),
        "throughput": out.report,
    })
}

fn simulate(output: &Path, scene: &SceneArgs) -> Result<()> {
    let config = scene.resolve()?;
    let (video, truth) = synthesize(&config)?;
    write_scene(output, &video, &truth, &config, None)?;
    eprintln!(
        "wrote {} frames, {} neurons to {}",
        video.frames,
        truth.neurons.len(),
        output.display()
    );
    Ok(())
}

fn make_dataset(output: &Path, videos: usize, patches_per_pair: usize, scene: &SceneArgs) -> Result<()> {
    let config = DatasetConfig {
        videos,
        patches_per_pair,
        scene: scene.resolve()?,
        motion: MotionConfig::default(),
    };
    let manifest = generate_training_set(&config, output)?;
    eprintln!(
        "wrote {} videos, {} patches ({} validation) to {}",
        manifest.videos.len(),
        manifest.patches.len(),
        manifest.validation,
        output.display()
    );
    Ok(())
}

fn segment(args: &PipelineArgs) -> Result<()> {
    let config = args.resolve()?;
    let out = run(&config)?;
    write_json(None, &summary(&out))
}

fn trace(args: &PipelineArgs) -> Result<()> {
    let mut config = args.resolve()?;
    if args.stages.is_none() {
        config.stages = vec![Stage::Traces];
    }
    if config.has(Stage::Segmentation) {
        return Err(Error::Config("trace does not run segmentation; use segment".into()));
    }
    if config.footprints.is_none() {
        return Err(Error::Config("trace needs --footprints".into()));
    }
    let out = run(&config)?;
    write_json(None, &summary(&out))
}

fn gt_masks(gt: &Path, motion: Option<&Path>) -> Result<Vec<voltseg::video_io::MaskImage>> {
    if gt.is_dir() {
        let estimates = motion.map(read_motion_csv).transpose()?;
        ground_truth_masks(gt, estimates.as_deref())
    } else {
        load_masks_any(gt)
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    pred: &Path,
    gt: &Path,
    motion: Option<&Path>,
    threshold: f64,
    report: Option<&Path>,
    overlay: Option<&Path>,
    scale: usize,
) -> Result<()> {
    let preds = load_masks_any(pred)?;
    let gts = gt_masks(gt, motion)?;
    let result = match_and_score(&preds, &gts, threshold)?;
    if let Some(path) = overlay {
        let (h, w) = preds
            .first()
            .or(gts.first())
            .map(|m| (m.height, m.width))
            .ok_or_else(|| Error::InvalidArgument("no masks to draw".into()))?;
        let scale = scale.max(1);
        let rgb = overlay::render(&preds, &gts, h, w, scale);
        overlay::write_png(path, &rgb, w * scale, h * scale)?;
    }
    let value = json!({
        "predictions": preds.len(),
        "ground_truth": gts.len(),
        "true_positives": result.true_positives(),
        "report": result,
    });
    write_json(report, &value)
}

fn bench(args: &PipelineArgs, sim_frames: usize, sim_seed: u64, report: Option<&Path>) -> Result<()> {
    let mut config = args.resolve()?;
    if args.stages.is_none() {
        config.stages = vec![Stage::Motion, Stage::Segmentation, Stage::Traces];
    }
    let weights = config
        .weights
        .clone()
        .ok_or_else(|| Error::Config("bench needs --weights".into()))?;
    let net = UNet::new(&load_weights(&weights)?)?;
    let video = match &config.input {
        p if !p.as_os_str().is_empty() => load_video(p)?,
        _ => {
            let scene = SceneConfig {
                frames: sim_frames,
                seed: sim_seed,
                ..SceneConfig::default()
            };
            synthesize(&scene)?.0
        }
    };
    let result = benchmark_pipeline(&video, &net, &config)?;
    let value = serde_json::to_value(&result).expect("serializes");
    if report.is_some() {
        write_json(report, &value)?;
    }
    write_json(None, &value)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { output, scene } => simulate(&output, &scene),
        Command::MakeDataset {
            output,
            videos,
            patches_per_pair,
            scene,
        } => make_dataset(&output, videos, patches_per_pair, &scene),
        Command::Segment { pipeline } => segment(&pipeline),
        Command::Trace { pipeline } => trace(&pipeline),
        Command::Evaluate {
            pred,
            gt,
            motion,
            iou_threshold,
            report,
            overlay,
            overlay_scale,
        } => evaluate(
            &pred,
            &gt,
            motion.as_deref(),
            iou_threshold,
            report.as_deref(),
            overlay.as_deref(),
            overlay_scale,
        ),
        Command::Bench {
            pipeline,
            sim_frames,
            sim_seed,
            report,
        } => bench(&pipeline, sim_frames, sim_seed, report.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

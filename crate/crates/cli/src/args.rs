//! Command-line flags that mirror the pipeline configuration keys.

use std::path::PathBuf;

use clap::Args;
use voltseg::pipeline::{PipelineConfig, Stage};
use voltseg::Result;

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Args, Debug, Clone, Default)]
pub struct PipelineArgs {
    #[arg(long, help = "TOML configuration file; flags below override it")]
    pub config: Option<PathBuf>,
    #[arg(long, help = "Input video (.tif/.tiff multi-page or .vsegv1)")]
    pub input: Option<PathBuf>,
    #[arg(long, help = "Output directory")]
    pub output: Option<PathBuf>,
    #[arg(long, help = "U-Net weights (.vsegw1)")]
    pub weights: Option<PathBuf>,
    #[arg(long, help = "Existing footprints.json for a traces-only run")]
    pub footprints: Option<PathBuf>,
    #[arg(
        long,
        value_delimiter = ',',
        help = "Comma-separated stages: motion,segmentation,traces"
    )]
    pub stages: Option<Vec<String>>,
    #[arg(long, help = "Worker threads, 0 = all cores")]
    pub threads: Option<usize>,
    #[arg(long, help = "Run stages back to back instead of overlapping them")]
    pub batch: bool,

    #[arg(long)]
    pub segment_len: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, help = "Motion patch side in pixels")]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub search_radius: Option<usize>,
    #[arg(long, help = "Subpixel motion refinement (true/false)")]
    pub subpixel: Option<bool>,
    #[arg(long)]
    pub reference_frames: Option<usize>,
    #[arg(long, help = "U-Net tiling stride")]
    pub stride: Option<usize>,

    #[arg(long, help = "Probability threshold for spiking pixels")]
    pub threshold: Option<f32>,
    #[arg(long)]
    pub min_area: Option<usize>,
    #[arg(long)]
    pub max_area: Option<usize>,
    #[arg(long)]
    pub min_solidity: Option<f64>,
    #[arg(long)]
    pub max_eccentricity: Option<f64>,
    #[arg(long)]
    pub nmf_max_iters: Option<usize>,
    #[arg(long)]
    pub nmf_tol: Option<f64>,
    #[arg(long)]
    pub nmf_seed: Option<u64>,
    #[arg(long)]
    pub max_rank: Option<usize>,
    #[arg(long)]
    pub rank_error: Option<f64>,
    #[arg(long)]
    pub footprint_level: Option<f64>,
    #[arg(long)]
    pub merge_iou: Option<f64>,

    #[arg(long, help = "Write the motion-corrected video (true/false)")]
    pub save_corrected: Option<bool>,
    #[arg(long, help = "Write per-segment probability maps")]
    pub save_probability_maps: bool,
    #[arg(long, help = "Write traces as dF/F instead of raw mean intensity")]
    pub delta_f_over_f: bool,
}

macro_rules! override_fields {
    ($src:expr, $dst:expr, $($f:ident),*) => {
        $(if let Some(v) = $src.$f.clone() { $dst.$f = v; })*
    };
}

impl PipelineArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        override_fields!(
            self,
            c,
            input,
            output,
            threads,
            segment_len,
            sigma,
            patch_size,
            search_radius,
            subpixel,
            reference_frames,
            stride,
            threshold,
            min_area,
            max_area,
            min_solidity,
            max_eccentricity,
            nmf_max_iters,
            nmf_tol,
            nmf_seed,
            max_rank,
            rank_error,
            footprint_level,
            merge_iou,
            save_corrected
        );
        if self.weights.is_some() {
            c.weights = self.weights.clone();
        }
        if self.footprints.is_some() {
            c.footprints = self.footprints.clone();
        }
        if let Some(stages) = &self.stages {
            c.stages = stages
                .iter()
                .map(|s| s.trim().parse::<Stage>())
                .collect::<Result<_>>()?;
        }
        if self.batch {
            c.streaming = false;
        }
        if self.save_probability_maps {
            c.save_probability_maps = true;
        }
        if self.delta_f_over_f {
            c.delta_f_over_f = true;
        }
        Ok(c)
    }
}

//! Real-time neuron segmentation for voltage-imaging video.
//!
//! The pipeline motion-corrects a video, summarizes each 50-frame segment
//! into a spatial and a temporal summary image, runs a small U-Net over the
//! summaries to obtain per-segment spiking probability maps, and demixes
//! those maps into neuron footprints with per-component NMF. Voltage traces
//! are the mean intensity inside each footprint.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod area_table;
pub mod error;
pub mod evaluation;
pub mod footprints;
pub mod motion;
pub mod pipeline;
pub mod simulator;
pub mod summary;
pub mod traces;
pub mod unet;
pub mod video_io;

pub use error::{Error, Result};

//! Per-segment summary images.
//!
//! A motion-corrected video is split into consecutive segments of `L`
//! frames. Each segment becomes a spatial summary (temporal mean) and a
//! temporal summary (per-pixel max minus median of Gaussian-smoothed
//! frames), which responds to transient brightening such as spikes.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::video_io::{save_image_stack, Image, Video};

pub const DEFAULT_SEGMENT_LEN: usize = 50;
pub const DEFAULT_SIGMA: f64 = 3.0;

/// A read-only view of consecutive frames.
#[derive(Debug, Clone, Copy)]
pub struct TimeSegment<'a> {
    pub index: usize,
    /// First frame (0-based) in the source video.
    pub start: usize,
    pub height: usize,
    pub width: usize,
    data: &'a [f32],
}

impl<'a> TimeSegment<'a> {
    pub fn new(index: usize, start: usize, height: usize, width: usize, data: &'a [f32]) -> Result<Self> {
        let n = height * width;
        if n == 0 || data.is_empty() || !data.len().is_multiple_of(n) {
            return Err(Error::DimensionMismatch(format!(
                "segment buffer of {} samples is not a whole number of {height}x{width} frames",
                data.len()
            )));
        }
        Ok(TimeSegment {
            index,
            start,
            height,
            width,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.height * self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &'a [f32] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &'a [f32]> + '_ {
        self.data.chunks_exact(self.height * self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryPair {
    pub segment_index: usize,
    pub spatial: Image,
    pub temporal: Image,
}

/// Number of segments for `frames` frames at segment length `len`.
pub fn segment_count(frames: usize, len: usize) -> usize {
    frames.div_ceil(len)
}

pub fn split_segments(video: &Video, len: usize) -> Result<Vec<TimeSegment<'_>>> {
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "segment length must be >= 2, got {len}"
        )));
    }
    let n = video.pixels_per_frame();
    (0..segment_count(video.frames, len))
        .map(|i| {
            let start = i * len;
            let end = ((i + 1) * len).min(video.frames);
            TimeSegment::new(i, start, video.height, video.width, &video.data[start * n..end * n])
        })
        .collect()
}

/// Per-pixel temporal mean over the segment's frames.
pub fn spatial_summary(segment: &TimeSegment) -> Image {
    let n = segment.height * segment.width;
    let mut acc = vec![0.0f64; n];
    for f in segment.frames() {
        for (a, &v) in acc.iter_mut().zip(f) {
            *a += v as f64;
        }
    }
    let count = segment.len() as f64;
    Image {
        height: segment.height,
        width: segment.width,
        data: acc.into_iter().map(|v| (v / count) as f32).collect(),
    }
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| (t / total) as f32).collect()
}

/// Separable Gaussian blur with edge replication.
pub struct GaussianSmoother {
    kernel: Vec<f32>,
    radius: usize,
    height: usize,
    width: usize,
    // Row-pass scratch with `radius` replicated samples on each side.
    padded: Vec<f32>,
    tmp: Vec<f32>,
}

impl GaussianSmoother {
    pub fn new(sigma: f64, height: usize, width: usize) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
        }
        let kernel = gaussian_kernel(sigma);
        let radius = kernel.len() / 2;
        Ok(GaussianSmoother {
            kernel,
            radius,
            height,
            width,
            padded: vec![0.0; width.max(height) + 2 * radius],
            tmp: vec![0.0; height * width],
        })
    }

    pub fn smooth_into(&mut self, src: &[f32], dst: &mut [f32]) {
        let (h, w, r) = (self.height, self.width, self.radius);
        let k = &self.kernel;
        // Horizontal pass.
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let pad = &mut self.padded[..w + 2 * r];
            pad[..r].fill(row[0]);
            pad[r..r + w].copy_from_slice(row);
            pad[r + w..].fill(row[w - 1]);
            let out = &mut self.tmp[y * w..(y + 1) * w];
            for (x, o) in out.iter_mut().enumerate() {
                let win = &pad[x..x + k.len()];
                *o = win.iter().zip(k).map(|(a, b)| a * b).sum();
            }
        }
        // Vertical pass, accumulated row by row so inner loops run along x.
        dst.fill(0.0);
        for y in 0..h {
            let out = &mut dst[y * w..(y + 1) * w];
            for (j, &kv) in k.iter().enumerate() {
                let sy = (y as isize + j as isize - r as isize).clamp(0, h as isize - 1) as usize;
                let src_row = &self.tmp[sy * w..(sy + 1) * w];
                for (o, &s) in out.iter_mut().zip(src_row) {
                    *o += kv * s;
                }
            }
        }
    }
}

pub fn gaussian_smooth(image: &Image, sigma: f64) -> Result<Image> {
    let mut s = GaussianSmoother::new(sigma, image.height, image.width)?;
    let mut out = Image::new(image.height, image.width);
    s.smooth_into(&image.data, &mut out.data);
    Ok(out)
}

/// Per-pixel max minus median of the smoothed frames. Even frame counts use
/// the mean of the two middle order statistics.
pub fn temporal_summary(segment: &TimeSegment) -> Result<Image> {
    temporal_summary_with_sigma(segment, DEFAULT_SIGMA)
}

pub fn temporal_summary_with_sigma(segment: &TimeSegment, sigma: f64) -> Result<Image> {
    let count = segment.len();
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "temporal summary needs >= 2 frames, segment {} has {count}",
            segment.index
        )));
    }
    let n = segment.height * segment.width;
    let mut smoother = GaussianSmoother::new(sigma, segment.height, segment.width)?;
    // Pixel-major so each pixel's time series is contiguous.
    let mut series = vec![0.0f32; n * count];
    let mut frame_buf = vec![0.0f32; n];
    for (t, f) in segment.frames().enumerate() {
        smoother.smooth_into(f, &mut frame_buf);
        for (p, &v) in frame_buf.iter().enumerate() {
            series[p * count + t] = v;
        }
    }
    let data = series.chunks_exact_mut(count).map(max_minus_median).collect();
    Ok(Image {
        height: segment.height,
        width: segment.width,
        data,
    })
}

/// `max(s) - median(s)`; reorders `s`.
pub(crate) fn max_minus_median(s: &mut [f32]) -> f32 {
    let n = s.len();
    let max = s.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mid = n / 2;
    let (lower, upper_mid, _) = s.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper_mid = *upper_mid;
    let median = if n % 2 == 1 {
        upper_mid
    } else {
        let lower_mid = lower.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        0.5 * (lower_mid + upper_mid)
    };
    (max - median).max(0.0)
}

/// Both summaries of one segment. A single-frame segment has no temporal
/// information and gets an all-zero temporal image.
pub fn summarize_segment(segment: &TimeSegment, sigma: f64) -> Result<SummaryPair> {
    let spatial = spatial_summary(segment);
    let temporal = if segment.len() < 2 {
        Image::new(segment.height, segment.width)
    } else {
        temporal_summary_with_sigma(segment, sigma)?
    };
    Ok(SummaryPair {
        segment_index: segment.index,
        spatial,
        temporal,
    })
}

pub fn summarize(video: &Video, len: usize) -> Result<Vec<SummaryPair>> {
    summarize_with_sigma(video, len, DEFAULT_SIGMA)
}

pub fn summarize_with_sigma(video: &Video, len: usize, sigma: f64) -> Result<Vec<SummaryPair>> {
    let segments = split_segments(video, len)?;
    segments.par_iter().map(|s| summarize_segment(s, sigma)).collect()
}

/// Debug export: pages alternate spatial, temporal for each segment.
pub fn save_summaries(pairs: &[SummaryPair], path: impl AsRef<Path>) -> Result<()> {
    let pages: Vec<Image> = pairs
        .iter()
        .flat_map(|p| [p.spatial.clone(), p.temporal.clone()])
        .collect();
    save_image_stack(&pages, None, path.as_ref())
}

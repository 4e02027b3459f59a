//! Sliding-window inference over whole summary images.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::PATCH;
use super::forward::{UNet, Workspace};
use crate::error::{Error, Result};
use crate::summary::SummaryPair;
use crate::video_io::Image;

pub const DEFAULT_STRIDE: usize = 32;
const MERGE_WEIGHT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub segment_index: usize,
    pub values: Image,
}

/// Linear-interpolated percentile (`q` in [0, 1]) of `values`; reorders the slice.
pub fn percentile(values: &mut [f32], q: f64) -> f32 {
    let n = values.len();
    assert!(n > 0, "percentile of empty slice");
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    let (_, lo, upper) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    let lo = *lo as f64;
    if frac == 0.0 || upper.is_empty() {
        return lo as f32;
    }
    let hi = upper.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    (lo + frac * (hi - lo)) as f32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScale {
    pub p1: f32,
    pub p99: f32,
}

impl ChannelScale {
    pub fn of(channel: &[f32]) -> Self {
        let mut buf = channel.to_vec();
        let p1 = percentile(&mut buf, 0.01);
        let p99 = percentile(&mut buf, 0.99);
        ChannelScale { p1, p99 }
    }

    pub fn apply(&self, channel: &[f32], out: &mut [f32]) {
        let span = self.p99 as f64 - self.p1 as f64;
        if !(span > 1e-12 * (1.0 + (self.p99 as f64).abs())) {
            out.fill(0.0);
            return;
        }
        for (o, &v) in out.iter_mut().zip(channel) {
            *o = ((v as f64 - self.p1 as f64) / span).clamp(0.0, 1.0) as f32;
        }
    }
}

/// Robust per-channel scaling to [0, 1] by the 1st/99th percentiles.
/// Returns `2 x H x W` (spatial, temporal).
pub fn normalize_pair(pair: &SummaryPair) -> Vec<f32> {
    let n = pair.spatial.data.len();
    let mut out = vec![0.0f32; 2 * n];
    for (c, img) in [&pair.spatial, &pair.temporal].into_iter().enumerate() {
        ChannelScale::of(&img.data).apply(&img.data, &mut out[c * n..(c + 1) * n]);
    }
    out
}

/// Reflect index into `0..len` (mirror without repeating the edge sample).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

/// Patch origins along one axis: multiples of `stride` plus one flush to the end.
pub fn window_origins(len: usize, stride: usize) -> Vec<usize> {
    let last = len - PATCH;
    let mut v: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if v.last() != Some(&last) {
        v.push(last);
    }
    v
}

/// Separable tent weight for position `i` within a patch, peaking at the centre.
pub fn tent_weight(i: usize) -> f64 {
    let c = PATCH as f64 / 2.0;
    (1.0 - ((i as f64 + 0.5) - c).abs() / c).max(MERGE_WEIGHT_FLOOR)
}

/// Run the network over sliding windows and merge the outputs by a
/// tent-weighted average. Frames smaller than the patch are reflect-padded
/// and the result cropped back.
pub fn tile_and_merge(net: &UNet, pair: &SummaryPair, stride: usize) -> Result<ProbabilityMap> {
    if !pair.spatial.same_dims(&pair.temporal) {
        return Err(Error::DimensionMismatch("summary pair images differ in size".into()));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let (h, w) = (pair.spatial.height, pair.spatial.width);
    let norm = normalize_pair(pair);
    let (ph, pw) = (h.max(PATCH), w.max(PATCH));
    let padded: Vec<f32> = if (ph, pw) == (h, w) {
        norm
    } else {
        let mut p = vec![0.0f32; 2 * ph * pw];
        for c in 0..2 {
            for y in 0..ph {
                let sy = reflect(y as isize, h);
                for x in 0..pw {
                    p[(c * ph + y) * pw + x] = norm[(c * h + sy) * w + reflect(x as isize, w)];
                }
            }
        }
        p
    };

    let ys = window_origins(ph, stride);
    let xs = window_origins(pw, stride);
    let origins: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();

    let outputs: Vec<Vec<f32>> = origins
        .par_iter()
        .map_init(Workspace::default, |ws, &(y0, x0)| {
            let mut patch = vec![0.0f32; 2 * PATCH * PATCH];
            for c in 0..2 {
                for y in 0..PATCH {
                    let src = &padded[(c * ph + y0 + y) * pw + x0..][..PATCH];
                    patch[(c * PATCH + y) * PATCH..][..PATCH].copy_from_slice(src);
                }
            }
            net.forward_with(&patch, ws)
        })
        .collect::<Result<_>>()?;

    // Merge sequentially in origin order so results do not depend on threading.
    let tent: Vec<f64> = (0..PATCH).map(tent_weight).collect();
    let mut num = vec![0.0f64; ph * pw];
    let mut den = vec![0.0f64; ph * pw];
    for (&(y0, x0), out) in origins.iter().zip(&outputs) {
        for y in 0..PATCH {
            let wy = tent[y];
            let row = (y0 + y) * pw + x0;
            for x in 0..PATCH {
                let wgt = wy * tent[x];
                num[row + x] += wgt * out[y * PATCH + x] as f64;
                den[row + x] += wgt;
            }
        }
    }
    let mut values = Image::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let i = y * pw + x;
            values.set(y, x, ((num[i] / den[i]) as f32).clamp(0.0, 1.0));
        }
    }
    Ok(ProbabilityMap {
        segment_index: pair.segment_index,
        values,
    })
}

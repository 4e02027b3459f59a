//! Rigid motion correction by patch-tiled ZNCC search.
//!
//! The reference is tiled with square patches. For every integer candidate
//! displacement within the search radius, each reference patch is correlated
//! against the frame window displaced by that candidate, and the candidate
//! with the highest mean ZNCC across patches wins. Frame-window statistics
//! come from summed-area tables; reference patches are mean-removed once, so
//! only the cross term is accumulated per candidate.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::area_table::AreaTables;
use crate::error::{Error, Result};
use crate::video_io::{Image, Video};

/// Displacement of frame content relative to the reference:
/// `frame(y, x) ~ reference(y - dy, x - dx)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionVector {
    pub dx: i32,
    pub dy: i32,
    /// Subpixel refinement in (-1, 1); zero when refinement is disabled.
    pub sub_x: f32,
    pub sub_y: f32,
}

impl MotionVector {
    pub fn integer(dx: i32, dy: i32) -> Self {
        MotionVector {
            dx,
            dy,
            sub_x: 0.0,
            sub_y: 0.0,
        }
    }

    pub fn x(&self) -> f64 {
        self.dx as f64 + self.sub_x as f64
    }

    pub fn y(&self) -> f64 {
        self.dy as f64 + self.sub_y as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionEstimate {
    pub vector: MotionVector,
    /// Mean ZNCC across patches at the chosen integer candidate.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    pub patch_size: usize,
    pub search_radius: usize,
    pub subpixel: bool,
    /// Number of leading frames averaged into the fixed reference.
    pub reference_frames: usize,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            patch_size: 21,
            search_radius: 10,
            subpixel: true,
            reference_frames: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    /// Top-left corners as `(x, y)`.
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(len: usize, margin: usize, patch: usize, stride: usize) -> Vec<usize> {
    let end = len - margin; // exclusive
    let mut v = Vec::new();
    let mut o = margin;
    while o + patch <= end {
        v.push(o);
        o += stride;
    }
    let flush = end - patch;
    if v.last() != Some(&flush) {
        v.push(flush);
    }
    v
}

impl PatchGrid {
    /// Non-overlapping tiling of the frame interior that stays `margin` pixels
    /// away from every edge, with a final row and column flush to the
    /// interior's far edge.
    pub fn tile(height: usize, width: usize, patch_size: usize, margin: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        let need = patch_size + 2 * margin;
        if height < need || width < need {
            return Err(Error::InvalidArgument(format!(
                "frame {height}x{width} smaller than patch_size + 2*search_radius = {need}"
            )));
        }
        let ys = axis_origins(height, margin, patch_size, patch_size);
        let xs = axis_origins(width, margin, patch_size, patch_size);
        let origins = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        Ok(PatchGrid {
            patch_size,
            stride: patch_size,
            origins,
        })
    }
}

/// Zero-mean normalized cross-correlation of two equally sized windows.
///
/// Returns 0 when either window has zero variance.
pub fn zncc(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "zncc windows {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(zncc_slices(&a.data, &b.data))
}

fn zncc_slices(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (da, db) = (x as f64 - ma, y as f64 - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    normalize(cov, va, vb, ma, mb)
}

#[inline]
fn normalize(cov: f64, va: f64, vb: f64, ma: f64, mb: f64) -> f64 {
    // Zero variance up to rounding noise relative to the signal level.
    let n_a = va <= 1e-12 * (1.0 + ma * ma);
    let n_b = vb <= 1e-12 * (1.0 + mb * mb);
    let z = (cov / (va * vb).sqrt()).clamp(-1.0, 1.0);
    if n_a || n_b {
        0.0
    } else {
        z
    }
}

/// Reference prepared for repeated searches: mean-removed patches and their
/// energies.
#[derive(Debug, Clone)]
pub struct MotionEstimator {
    height: usize,
    width: usize,
    grid: PatchGrid,
    radius: usize,
    subpixel: bool,
    centered: Vec<Vec<f32>>,
    energy: Vec<f64>,
    ref_means: Vec<f64>,
}

impl MotionEstimator {
    pub fn new(reference: &Image, grid: PatchGrid, search_radius: usize, subpixel: bool) -> Result<Self> {
        if search_radius < 1 {
            return Err(Error::InvalidArgument("search radius must be >= 1".into()));
        }
        let p = grid.patch_size;
        for &(x, y) in &grid.origins {
            if x < search_radius
                || y < search_radius
                || x + p + search_radius > reference.width
                || y + p + search_radius > reference.height
            {
                return Err(Error::InvalidArgument(format!(
                    "patch at ({x}, {y}) leaves no room for search radius {search_radius}"
                )));
            }
        }
        let mut centered = Vec::with_capacity(grid.origins.len());
        let mut energy = Vec::with_capacity(grid.origins.len());
        let mut ref_means = Vec::with_capacity(grid.origins.len());
        for &(x0, y0) in &grid.origins {
            let mut vals = Vec::with_capacity(p * p);
            for y in y0..y0 + p {
                vals.extend_from_slice(&reference.row(y)[x0..x0 + p]);
            }
            let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / (p * p) as f64;
            let c: Vec<f32> = vals.iter().map(|&v| (v as f64 - mean) as f32).collect();
            energy.push(c.iter().map(|&v| (v as f64) * (v as f64)).sum());
            centered.push(c);
            ref_means.push(mean);
        }
        Ok(MotionEstimator {
            height: reference.height,
            width: reference.width,
            grid,
            radius: search_radius,
            subpixel,
            centered,
            energy,
            ref_means,
        })
    }

    pub fn from_config(reference: &Image, config: &MotionConfig) -> Result<Self> {
        let grid = PatchGrid::tile(
            reference.height,
            reference.width,
            config.patch_size,
            config.search_radius,
        )?;
        Self::new(reference, grid, config.search_radius, config.subpixel)
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    /// Mean ZNCC for every candidate, laid out `[(dy + r) * (2r + 1) + (dx + r)]`.
    pub fn score_map(&self, frame: &[f32]) -> Vec<f64> {
        let r = self.radius as isize;
        let side = 2 * self.radius + 1;
        let p = self.grid.patch_size;
        let w = self.width;
        let tables = AreaTables::from_slice(frame, self.height, self.width);
        // Mean and centred energy of every p x p frame window.
        let (bh, bw) = (self.height - p + 1, self.width - p + 1);
        let n = (p * p) as f64;
        let mut box_mean = vec![0.0f64; bh * bw];
        let mut box_energy = vec![0.0f64; bh * bw];
        for y in 0..bh {
            for x in 0..bw {
                box_mean[y * bw + x] = tables.rect_sum(y, x, p, p) / n;
                box_energy[y * bw + x] = tables.rect_centered_sum_sq(y, x, p, p);
            }
        }
        let chunks = side.div_ceil(LANES);
        // Search window copied into a zero-padded buffer wide enough for
        // whole lane chunks.
        let win_rows = p + 2 * self.radius;
        let stride = p + chunks * LANES;
        let mut window = vec![0.0f32; win_rows * stride];
        let mut cross = vec![0.0f32; chunks * LANES];
        let mut scores = vec![0.0f64; side * side];
        for (pi, &(x0, y0)) in self.grid.origins.iter().enumerate() {
            let cref = &self.centered[pi];
            let e_ref = self.energy[pi];
            let ref_mean = self.ref_means[pi];
            for (i, dst) in window.chunks_exact_mut(stride).enumerate() {
                let fy = y0 - self.radius + i;
                let x = x0 - self.radius;
                dst[..p + 2 * self.radius].copy_from_slice(&frame[fy * w + x..fy * w + x + p + 2 * self.radius]);
            }
            for (dyi, dy) in (-r..=r).enumerate() {
                let rows = &window[dyi * stride..];
                let mut g = 0;
                while g < chunks {
                    let c = (chunks - g).min(4);
                    let out = &mut cross[g * LANES..(g + c) * LANES];
                    match c {
                        1 => correlate_rows::<1>(rows, stride, cref, p, g * LANES, out),
                        2 => correlate_rows::<2>(rows, stride, cref, p, g * LANES, out),
                        3 => correlate_rows::<3>(rows, stride, cref, p, g * LANES, out),
                        _ => correlate_rows::<4>(rows, stride, cref, p, g * LANES, out),
                    }
                    g += c;
                }
                let fy0 = (y0 as isize + dy) as usize;
                let b0 = fy0 * bw + x0 - self.radius;
                let means = &box_mean[b0..b0 + side];
                let energies = &box_energy[b0..b0 + side];
                let row = &mut scores[dyi * side..(dyi + 1) * side];
                for (((s, &c), &mb), &vb) in row.iter_mut().zip(&cross).zip(means).zip(energies) {
                    *s += normalize(c as f64, e_ref, vb, ref_mean, mb);
                }
            }
        }
        let np = self.grid.origins.len() as f64;
        scores.iter_mut().for_each(|s| *s /= np);
        scores
    }

    pub fn estimate(&self, frame: &[f32]) -> MotionEstimate {
        let r = self.radius as i32;
        let side = 2 * self.radius + 1;
        let scores = self.score_map(frame);
        let idx = |dx: i32, dy: i32| ((dy + r) as usize) * side + (dx + r) as usize;

        // Candidates in tie-break order: |dx|+|dy|, then dy, then dx.
        let mut best = (0i32, 0i32);
        let mut best_score = f64::NEG_INFINITY;
        for l1 in 0..=2 * r {
            for dy in -r..=r {
                let rest = l1 - dy.abs();
                if rest < 0 || rest > r {
                    continue;
                }
                let dxs: &[i32] = if rest == 0 { &[0] } else { &[-rest, rest] };
                for &dx in dxs {
                    let s = scores[idx(dx, dy)];
                    if s > best_score {
                        best_score = s;
                        best = (dx, dy);
                    }
                }
            }
        }
        let (dx, dy) = best;
        let mut v = MotionVector::integer(dx, dy);
        if self.subpixel {
            let c = scores[idx(dx, dy)];
            if dx.abs() < r {
                v.sub_x = quadratic_peak(scores[idx(dx - 1, dy)], c, scores[idx(dx + 1, dy)]);
            }
            if dy.abs() < r {
                v.sub_y = quadratic_peak(scores[idx(dx, dy - 1)], c, scores[idx(dx, dy + 1)]);
            }
        }
        MotionEstimate {
            vector: v,
            confidence: best_score,
        }
    }
}

const LANES: usize = 8;

/// Cross term of one reference patch against `C * LANES` consecutive
/// horizontal offsets starting at `base`, for the window rows beginning at
/// `rows`.
#[inline(always)]
fn correlate_rows<const C: usize>(rows: &[f32], stride: usize, cref: &[f32], p: usize, base: usize, out: &mut [f32]) {
    let mut acc = [[0.0f32; LANES]; C];
    for yy in 0..p {
        let row = &rows[yy * stride + base..];
        let rrow = &cref[yy * p..(yy + 1) * p];
        for (xx, &rv) in rrow.iter().enumerate() {
            let fs = &row[xx..xx + C * LANES];
            for (c, a) in acc.iter_mut().enumerate() {
                let f: &[f32; LANES] = fs[c * LANES..(c + 1) * LANES].try_into().unwrap();
                for l in 0..LANES {
                    a[l] += rv * f[l];
                }
            }
        }
    }
    for (c, a) in acc.iter().enumerate() {
        out[c * LANES..(c + 1) * LANES].copy_from_slice(a);
    }
}

/// Vertex offset of the parabola through (-1, l), (0, c), (1, r).
fn quadratic_peak(l: f64, c: f64, r: f64) -> f32 {
    let denom = l - 2.0 * c + r;
    if denom >= -1e-12 {
        return 0.0;
    }
    let off = 0.5 * (l - r) / denom;
    off.clamp(-0.5, 0.5) as f32
}

/// Estimate the displacement of `frame` relative to `reference`.
pub fn estimate_motion(
    frame: &Image,
    reference: &Image,
    grid: &PatchGrid,
    search_radius: usize,
    subpixel: bool,
) -> Result<MotionEstimate> {
    if !frame.same_dims(reference) {
        return Err(Error::DimensionMismatch(format!(
            "frame {}x{} vs reference {}x{}",
            frame.height, frame.width, reference.height, reference.width
        )));
    }
    let need = grid.patch_size + 2 * search_radius;
    if frame.height < need || frame.width < need {
        return Err(Error::InvalidArgument(format!(
            "frame {}x{} smaller than patch_size + 2*search_radius = {need}",
            frame.height, frame.width
        )));
    }
    let est = MotionEstimator::new(reference, grid.clone(), search_radius, subpixel)?;
    Ok(est.estimate(&frame.data))
}

/// Temporal mean of the first `n` frames.
pub fn mean_reference(video: &Video, n: usize) -> Image {
    let n = n.clamp(1, video.frames);
    let mut acc = vec![0.0f64; video.pixels_per_frame()];
    for t in 0..n {
        for (a, &v) in acc.iter_mut().zip(video.frame(t)) {
            *a += v as f64;
        }
    }
    Image {
        height: video.height,
        width: video.width,
        data: acc.into_iter().map(|v| (v / n as f64) as f32).collect(),
    }
}

/// Resample `frame` so that content displaced by `v` is moved back onto the
/// reference grid. Out-of-frame samples replicate the nearest edge pixel.
pub fn shift_frame(frame: &[f32], height: usize, width: usize, v: &MotionVector, out: &mut [f32]) {
    let clamp_y = |y: i64| y.clamp(0, height as i64 - 1) as usize;
    let clamp_x = |x: i64| x.clamp(0, width as i64 - 1) as usize;
    if v.sub_x == 0.0 && v.sub_y == 0.0 {
        for y in 0..height {
            let sy = clamp_y(y as i64 + v.dy as i64);
            let src = &frame[sy * width..(sy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[clamp_x(x as i64 + v.dx as i64)];
            }
        }
        return;
    }
    let (fx, fy) = (v.x(), v.y());
    let (ix, iy) = (fx.floor(), fy.floor());
    let (ax, ay) = ((fx - ix) as f32, (fy - iy) as f32);
    let (ix, iy) = (ix as i64, iy as i64);
    for y in 0..height {
        let y0 = clamp_y(y as i64 + iy);
        let y1 = clamp_y(y as i64 + iy + 1);
        for x in 0..width {
            let x0 = clamp_x(x as i64 + ix);
            let x1 = clamp_x(x as i64 + ix + 1);
            let top = frame[y0 * width + x0] * (1.0 - ax) + frame[y0 * width + x1] * ax;
            let bot = frame[y1 * width + x0] * (1.0 - ax) + frame[y1 * width + x1] * ax;
            out[y * width + x] = top * (1.0 - ay) + bot * ay;
        }
    }
}

/// Motion-correct a range of frames against a prepared estimator. Returns the
/// corrected samples (t-major) and the per-frame estimates.
pub fn correct_frames(
    estimator: &MotionEstimator,
    video: &Video,
    range: std::ops::Range<usize>,
) -> (Vec<f32>, Vec<MotionEstimate>) {
    let n = video.pixels_per_frame();
    let mut out = vec![0.0f32; range.len() * n];
    let estimates: Vec<MotionEstimate> = out
        .par_chunks_mut(n)
        .zip(range.into_par_iter())
        .map(|(dst, t)| {
            let src = video.frame(t);
            let est = estimator.estimate(src);
            shift_frame(src, video.height, video.width, &est.vector, dst);
            est
        })
        .collect();
    (out, estimates)
}

/// Motion-correct a whole video against the mean of its leading frames.
pub fn correct_motion(video: &Video, config: &MotionConfig) -> Result<(Video, Vec<MotionEstimate>)> {
    if video.frames == 1 {
        return Ok((
            video.clone(),
            vec![MotionEstimate {
                vector: MotionVector::default(),
                confidence: 1.0,
            }],
        ));
    }
    let reference = mean_reference(video, config.reference_frames);
    let estimator = MotionEstimator::from_config(&reference, config)?;
    let (data, estimates) = correct_frames(&estimator, video, 0..video.frames);
    let corrected = Video {
        data,
        ..video.clone_header()
    };
    Ok((corrected, estimates))
}

impl Video {
    /// Same dimensions and metadata, empty sample buffer.
    pub(crate) fn clone_header(&self) -> Video {
        Video {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: Vec::new(),
            frame_rate: self.frame_rate,
        }
    }
}

/// Write `frame,dx,dy,confidence` rows; dx/dy include subpixel refinement.
pub fn write_motion_csv(estimates: &[MotionEstimate], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "frame,dx,dy,confidence")?;
        for (t, e) in estimates.iter().enumerate() {
            writeln!(w, "{t},{},{},{}", e.vector.x(), e.vector.y(), e.confidence)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Parse a motion CSV written by [`write_motion_csv`]; values are split back
/// into rounded integer and fractional parts.
pub fn read_motion_csv(path: impl AsRef<Path>) -> Result<Vec<MotionEstimate>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |k: usize| -> Result<f64> {
            cols.get(k)
                .and_then(|c| c.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::format(path, format!("line {}: bad column {k}", i + 1)))
        };
        let (x, y, c) = (parse(1)?, parse(2)?, parse(3)?);
        let (dx, dy) = (x.round(), y.round());
        out.push(MotionEstimate {
            vector: MotionVector {
                dx: dx as i32,
                dy: dy as i32,
                sub_x: (x - dx) as f32,
                sub_y: (y - dy) as f32,
            },
            confidence: c,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize, seed: u32) -> Image {
        let mut img = Image::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f32, y as f32);
                let v = 50.0
                    + 20.0 * (0.31 * xf + seed as f32).sin() * (0.23 * yf).cos()
                    + 10.0 * (0.11 * (xf + 2.0 * yf)).sin()
                    + 5.0 * ((x * 7 + y * 13 + seed as usize) % 11) as f32;
                img.set(y, x, v);
            }
        }
        img
    }

    #[test]
    fn grid_tiles_interior_with_flush_edge() {
        let g = PatchGrid::tile(128, 128, 21, 10).unwrap();
        let xs: Vec<usize> = g.origins.iter().filter(|o| o.1 == 10).map(|o| o.0).collect();
        assert_eq!(xs, vec![10, 31, 52, 73, 94, 97]);
        for &(x, y) in &g.origins {
            assert!(x >= 10 && y >= 10 && x + 21 <= 118 && y + 21 <= 118);
        }
    }

    #[test]
    fn grid_rejects_small_frames() {
        assert!(PatchGrid::tile(40, 60, 21, 10).is_err());
        assert!(PatchGrid::tile(41, 41, 21, 10).is_ok());
    }

    #[test]
    fn zncc_self_and_affine_negative() {
        let a = textured(21, 21, 1);
        assert!((zncc(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        let neg = Image {
            data: a.data.iter().map(|v| -2.0 * v + 5.0).collect(),
            ..a.clone()
        };
        assert!((zncc(&a, &neg).unwrap() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn zncc_constant_window_is_zero() {
        let a = textured(21, 21, 1);
        let c = Image::filled(21, 21, 7.0);
        assert_eq!(zncc(&a, &c).unwrap(), 0.0);
        assert_eq!(zncc(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn zncc_dimension_mismatch() {
        assert!(zncc(&Image::new(3, 3), &Image::new(3, 4)).is_err());
    }

    #[test]
    fn identity_motion() {
        let f = textured(64, 64, 3);
        let g = PatchGrid::tile(64, 64, 21, 5).unwrap();
        let e = estimate_motion(&f, &f, &g, 5, true).unwrap();
        assert_eq!((e.vector.dx, e.vector.dy), (0, 0));
        assert!((e.confidence - 1.0).abs() < 1e-5);
        assert!(e.vector.sub_x.abs() < 0.5 && e.vector.sub_y.abs() < 0.5);
    }

    #[test]
    fn estimate_rejects_small_frame() {
        let f = textured(30, 30, 0);
        let g = PatchGrid {
            patch_size: 21,
            stride: 21,
            origins: vec![(0, 0)],
        };
        assert!(estimate_motion(&f, &f, &g, 10, false).is_err());
    }

    #[test]
    fn shift_integer_edge_replicates() {
        let data: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let mut out = vec![0.0; 9];
        shift_frame(&data, 3, 3, &MotionVector::integer(1, 0), &mut out);
        assert_eq!(out, vec![1., 2., 2., 4., 5., 5., 7., 8., 8.]);
    }

    #[test]
    fn quadratic_peak_symmetric() {
        assert_eq!(quadratic_peak(0.5, 1.0, 0.5), 0.0);
        assert!(quadratic_peak(0.8, 1.0, 0.2) < 0.0);
        assert_eq!(quadratic_peak(1.0, 1.0, 1.0), 0.0);
    }
}

//! Synthetic voltage-imaging videos with ground truth.
//!
//! A static scene (uneven illumination, textured background, dark vessels,
//! elliptical neurons) is rendered into a canvas padded by the motion
//! amplitude. Each frame adds the neurons' spike transients, crops the canvas
//! at the frame's random-walk displacement, and applies noise.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{correct_motion, MotionConfig, MotionEstimate};
use crate::summary::{segment_count, summarize, DEFAULT_SEGMENT_LEN};
use crate::unet::{normalize_pair, PATCH};
use crate::video_io::{load_masks, save_image_stack, save_masks, write_raw_video, Image, MaskImage, Video};

/// Mean background intensity before illumination and clutter.
const BASE_LEVEL: f64 = 100.0;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub frame_rate: f64,
    /// Inclusive range of the neuron count.
    pub neurons: [usize; 2],
    /// Range of the ellipse semi-axes, in pixels.
    pub neuron_radius: [f64; 2],
    /// Probability that a neuron is placed overlapping an earlier one.
    pub overlap_probability: f64,
    /// Probability that a neuron has a dimmer centre than its rim.
    pub annular_probability: f64,
    /// Mean firing rate per neuron, in Hz.
    pub spike_rate: f64,
    /// Fluorescence increase at a spike as a fraction of the neuron's
    /// resting brightness.
    pub spike_amplitude: f64,
    pub vessels: usize,
    /// Peak relative deviation of the illumination field from flat.
    pub illumination: f64,
    /// Relative amplitude of the static background texture.
    pub clutter: f64,
    /// Noise standard deviation as a fraction of the background level.
    pub noise: f64,
    /// Maximum absolute displacement per axis, in pixels.
    pub motion_amplitude: i32,
    /// Per-frame probability of a unit step on each axis.
    pub motion_step_probability: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 128,
            width: 128,
            frames: 1000,
            frame_rate: 400.0,
            neurons: [4, 8],
            neuron_radius: [5.0, 8.0],
            overlap_probability: 0.2,
            annular_probability: 0.3,
            spike_rate: 4.0,
            spike_amplitude: 0.4,
            vessels: 2,
            illumination: 0.3,
            clutter: 0.15,
            noise: 0.1,
            motion_amplitude: 5,
            motion_step_probability: 0.1,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.height < 64 || self.width < 64 {
            return bad(format!(
                "scene must be at least 64x64, got {}x{}",
                self.height, self.width
            ));
        }
        if self.frames == 0 {
            return bad("scene needs at least one frame".into());
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame rate must be positive".into());
        }
        if self.neurons[0] > self.neurons[1] {
            return bad(format!("empty neuron count range {:?}", self.neurons));
        }
        let [r0, r1] = self.neuron_radius;
        if !(r0 > 0.0 && r0 <= r1) {
            return bad(format!("invalid neuron radius range {:?}", self.neuron_radius));
        }
        let probs = [
            self.overlap_probability,
            self.annular_probability,
            self.motion_step_probability,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        let nonneg = [
            self.spike_rate,
            self.spike_amplitude,
            self.illumination,
            self.clutter,
            self.noise,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("rates, amplitudes and noise must be finite and non-negative".into());
        }
        if self.illumination >= 1.0 {
            return bad("illumination deviation must be below 1".into());
        }
        if self.motion_amplitude < 0 {
            return bad("motion amplitude must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronTruth {
    /// Centre in frame coordinates at zero displacement, `(x, y)`.
    pub center: [f64; 2],
    /// Semi-axes `(a, b)` and rotation in radians.
    pub axes: [f64; 2],
    pub angle: f64,
    pub annular: bool,
    /// Frame indices of spike onsets.
    pub spikes: Vec<usize>,
    /// Noise-free mean fluorescence of the neuron's footprint, per frame.
    pub fluorescence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub neurons: Vec<NeuronTruth>,
    /// Footprint masks in frame coordinates at zero displacement.
    pub footprints: Vec<MaskImage>,
    /// True `(dx, dy)` per frame: frame content is the scene moved by it.
    pub motion: Vec<(i32, i32)>,
    pub segment_len: usize,
    /// Union of footprints of neurons spiking in each segment.
    pub segment_masks: Vec<MaskImage>,
}

/// Serialized form of [`GroundTruth`] without the mask images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub frame_rate: f64,
    pub segment_len: usize,
    pub neurons: Vec<NeuronTruth>,
    pub motion: Vec<[i32; 2]>,
    /// Translation from scene coordinates to motion-corrected coordinates,
    /// when the video has been corrected.
    #[serde(default)]
    pub reference_offset: Option<[i32; 2]>,
    pub config: SceneConfig,
}

impl GroundTruth {
    /// Footprints translated by `offset`, e.g. into motion-corrected
    /// coordinates.
    pub fn footprints_at(&self, offset: (i32, i32)) -> Vec<MaskImage> {
        self.footprints
            .iter()
            .map(|m| m.translated(offset.0, offset.1))
            .collect()
    }

    pub fn segment_masks_at(&self, offset: (i32, i32)) -> Vec<MaskImage> {
        self.segment_masks
            .iter()
            .map(|m| m.translated(offset.0, offset.1))
            .collect()
    }

    pub fn record(&self, video: &Video, config: &SceneConfig, offset: Option<(i32, i32)>) -> GroundTruthRecord {
        GroundTruthRecord {
            height: video.height,
            width: video.width,
            frames: video.frames,
            frame_rate: config.frame_rate,
            segment_len: self.segment_len,
            neurons: self.neurons.clone(),
            motion: self.motion.iter().map(|&(x, y)| [x, y]).collect(),
            reference_offset: offset.map(|(x, y)| [x, y]),
            config: config.clone(),
        }
    }
}

/// Load `gt.json`.
pub fn load_ground_truth_record(path: impl AsRef<Path>) -> Result<GroundTruthRecord> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// The constant translation between scene coordinates and the coordinates of
/// a motion-corrected video: the per-axis median of true minus estimated
/// displacement. It is fractional when the reference averages frames taken
/// at different positions.
pub fn reference_offset(truth: &[(i32, i32)], estimates: &[MotionEstimate]) -> [f64; 2] {
    let median = |mut v: Vec<f64>| -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let pairs = truth.iter().zip(estimates);
    [
        median(pairs.clone().map(|(m, e)| m.0 as f64 - e.vector.x()).collect()),
        median(pairs.map(|(m, e)| m.1 as f64 - e.vector.y()).collect()),
    ]
}

/// Whole-pixel translation for moving masks by a reference offset.
pub fn pixel_offset(offset: [f64; 2]) -> (i32, i32) {
    (offset[0].round() as i32, offset[1].round() as i32)
}

/// Ground-truth footprints of a scene directory written by [`write_scene`].
/// With `estimates` from correcting that scene's video, the masks are moved
/// into the corrected coordinates; otherwise they are returned as stored.
pub fn ground_truth_masks(dir: impl AsRef<Path>, estimates: Option<&[MotionEstimate]>) -> Result<Vec<MaskImage>> {
    let dir = dir.as_ref();
    let masks = load_masks(dir.join("footprints.tif"))?;
    let Some(estimates) = estimates else {
        return Ok(masks);
    };
    let record = load_ground_truth_record(dir.join("gt.json"))?;
    if estimates.len() != record.motion.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} motion estimates for a {}-frame scene",
            estimates.len(),
            record.motion.len()
        )));
    }
    let truth: Vec<(i32, i32)> = record.motion.iter().map(|m| (m[0], m[1])).collect();
    let (tx, ty) = pixel_offset(reference_offset(&truth, estimates));
    let [sx, sy] = record.reference_offset.unwrap_or([0, 0]);
    Ok(masks.iter().map(|m| m.translated(tx - sx, ty - sy)).collect())
}

struct Neuron {
    truth: NeuronTruth,
    /// Canvas pixel indices and shape weights in (0, 1].
    pixels: Vec<(usize, f32)>,
    /// Resting brightness added at full shape weight.
    brightness: f64,
    /// Spike response per frame offset after onset.
    kernel: Vec<f64>,
    mask: MaskImage,
}

fn smoothstep(edge: f64, v: f64) -> f64 {
    // 1 inside, 0 outside, linear ramp one pixel wide around `edge`.
    (edge - v + 0.5).clamp(0.0, 1.0)
}

struct Canvas {
    height: usize,
    width: usize,
    pad: usize,
}

impl Canvas {
    fn len(&self) -> usize {
        self.height * self.width
    }
}

fn place_neurons(config: &SceneConfig, canvas: &Canvas, rng: &mut ChaCha8Rng) -> Result<Vec<Neuron>> {
    let count = rng.random_range(config.neurons[0]..=config.neurons[1]);
    let (h, w) = (config.height, config.width);
    let [r0, r1] = config.neuron_radius;
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let mut neurons = Vec::with_capacity(count);
    for _ in 0..count {
        let mut ok = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let a = rng.random_range(r0..=r1);
            let b = a * rng.random_range(0.7..=1.0);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let margin = a + 2.0;
            let overlap = !placed.is_empty() && rng.random_bool(config.overlap_probability);
            let (cx, cy) = if overlap {
                let &(px, py, pr) = &placed[rng.random_range(0..placed.len())];
                let d = rng.random_range(0.9..=1.3) * pr.max(a);
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                (px + d * t.cos(), py + d * t.sin())
            } else {
                (
                    rng.random_range(margin..w as f64 - margin),
                    rng.random_range(margin..h as f64 - margin),
                )
            };
            if cx < margin || cy < margin || cx > w as f64 - margin || cy > h as f64 - margin {
                continue;
            }
            let clear = placed.iter().all(|&(px, py, pr)| {
                let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                if overlap {
                    // Partial overlap only: the two centres stay apart.
                    d >= 0.9 * pr.max(a)
                } else {
                    d >= pr + a + 2.0
                }
            });
            if clear {
                ok = Some((cx, cy, a, b, angle));
                break;
            }
        }
        let Some((cx, cy, a, b, angle)) = ok else {
            return Err(Error::InvalidArgument(format!(
                "could not place {count} neurons of radius up to {r1} in a {h}x{w} frame"
            )));
        };
        placed.push((cx, cy, a));

        let annular = rng.random_bool(config.annular_probability);
        let brightness = BASE_LEVEL * rng.random_range(0.3..=0.7);
        let decay = rng.random_range(2..=4usize);
        let tau = decay as f64 / 2.0;
        let kernel = (0..decay).map(|k| (-(k as f64) / tau).exp()).collect();
        let (cos, sin) = (angle.cos(), angle.sin());
        let mut pixels = Vec::new();
        let mut mask = MaskImage::new(h, w);
        let reach = a.ceil() as i64 + 2;
        for y in (cy as i64 - reach)..=(cy as i64 + reach) {
            for x in (cx as i64 - reach)..=(cx as i64 + reach) {
                if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                    continue;
                }
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                // Distance to the boundary along the ray, in pixels.
                let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                let r = (u * u + v * v).sqrt();
                let inside = if rho > 1e-9 { smoothstep(r / rho, r) } else { 1.0 };
                if inside <= 0.0 {
                    continue;
                }
                let profile = if annular { 0.5 + 0.5 * rho.min(1.0).powi(2) } else { 1.0 };
                let weight = (inside * profile) as f32;
                if rho <= 1.0 {
                    mask.set(y as usize, x as usize, true);
                }
                let ci = (y as usize + canvas.pad) * canvas.width + x as usize + canvas.pad;
                pixels.push((ci, weight));
            }
        }
        neurons.push(Neuron {
            truth: NeuronTruth {
                center: [cx, cy],
                axes: [a, b],
                angle,
                annular,
                spikes: Vec::new(),
                fluorescence: Vec::new(),
            },
            pixels,
            brightness,
            kernel,
            mask,
        });
    }
    Ok(neurons)
}

/// Static background: illumination field times (textured base minus vessels).
fn render_background(config: &SceneConfig, canvas: &Canvas, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (ch, cw) = (canvas.height, canvas.width);
    let coeffs: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
    let norm = coeffs.iter().map(|c| c.abs()).sum::<f64>().max(1e-9);
    let mut field = vec![0.0f64; canvas.len()];
    for y in 0..ch {
        let v = 2.0 * y as f64 / (ch - 1) as f64 - 1.0;
        for x in 0..cw {
            let u = 2.0 * x as f64 / (cw - 1) as f64 - 1.0;
            let poly = coeffs[0] * u + coeffs[1] * v + coeffs[2] * u * u + coeffs[3] * u * v + coeffs[4] * v * v;
            field[y * cw + x] = 1.0 + config.illumination * poly / norm;
        }
    }

    // Texture: a sum of random Gaussian blobs of mixed sign and size.
    let mut texture = vec![0.0f64; canvas.len()];
    let blobs = (ch * cw) / 64;
    for _ in 0..blobs {
        let (bx, by) = (rng.random_range(0.0..cw as f64), rng.random_range(0.0..ch as f64));
        let s = rng.random_range(1.5..4.0f64);
        let amp = rng.random_range(-1.0..=1.0f64);
        let reach = (3.0 * s).ceil() as i64;
        for y in (by as i64 - reach).max(0)..(by as i64 + reach).min(ch as i64) {
            for x in (bx as i64 - reach).max(0)..(bx as i64 + reach).min(cw as i64) {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                texture[y as usize * cw + x as usize] += amp * (-d2 / (2.0 * s * s)).exp();
            }
        }
    }
    let rms = (texture.iter().map(|v| v * v).sum::<f64>() / texture.len() as f64)
        .sqrt()
        .max(1e-9);

    // Vessels: quadratic Bezier curves crossing the canvas.
    let mut vessel = vec![0.0f64; canvas.len()];
    for _ in 0..config.vessels {
        let (fw, fh) = (cw as f64, ch as f64);
        let p1 = (rng.random_range(0.0..fw), rng.random_range(0.0..fh));
        let (p0, p2) = if rng.random_bool(0.5) {
            ((rng.random_range(0.0..fw), 0.0), (rng.random_range(0.0..fw), fh))
        } else {
            ((0.0, rng.random_range(0.0..fh)), (fw, rng.random_range(0.0..fh)))
        };
        let half_width = rng.random_range(1.0..2.5f64);
        let depth = rng.random_range(0.3..0.6f64);
        let steps = 4 * (ch + cw);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let px = (1.0 - t).powi(2) * p0.0 + 2.0 * (1.0 - t) * t * p1.0 + t * t * p2.0;
            let py = (1.0 - t).powi(2) * p0.1 + 2.0 * (1.0 - t) * t * p1.1 + t * t * p2.1;
            let reach = half_width.ceil() as i64 + 1;
            for y in (py as i64 - reach).max(0)..(py as i64 + reach + 1).min(ch as i64) {
                for x in (px as i64 - reach).max(0)..(px as i64 + reach + 1).min(cw as i64) {
                    let d = ((x as f64 - px).powi(2) + (y as f64 - py).powi(2)).sqrt();
                    let v = depth * smoothstep(half_width, d);
                    let cell = &mut vessel[y as usize * cw + x as usize];
                    *cell = cell.max(v);
                }
            }
        }
    }

    (0..canvas.len())
        .map(|i| {
            let base = BASE_LEVEL * (1.0 + config.clutter * texture[i] / rms).max(0.2) * (1.0 - vessel[i]);
            (base * field[i]) as f32
        })
        .collect()
}

fn random_walk(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<(i32, i32)> {
    let amp = config.motion_amplitude;
    let mut pos = (0i32, 0i32);
    let mut out = Vec::with_capacity(config.frames);
    for _ in 0..config.frames {
        out.push(pos);
        if amp == 0 {
            continue;
        }
        for axis in [&mut pos.0, &mut pos.1] {
            if rng.random_bool(config.motion_step_probability) {
                let step = if rng.random_bool(0.5) { 1 } else { -1 };
                *axis = (*axis + step).clamp(-amp, amp);
            }
        }
    }
    out
}

/// Generate a video and its ground truth. Deterministic given the config.
pub fn synthesize(config: &SceneConfig) -> Result<(Video, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pad = config.motion_amplitude as usize;
    let canvas = Canvas {
        height: config.height + 2 * pad,
        width: config.width + 2 * pad,
        pad,
    };
    let (h, w, t_len) = (config.height, config.width, config.frames);

    let background = render_background(config, &canvas, &mut rng);
    let mut neurons = place_neurons(config, &canvas, &mut rng)?;
    let p_spike = (config.spike_rate / config.frame_rate).min(1.0);
    for n in neurons.iter_mut() {
        n.truth.spikes = (0..t_len).filter(|_| rng.random_bool(p_spike)).collect();
    }
    let motion = random_walk(config, &mut rng);

    // Per-neuron multiplicative activity: 1 at rest, 1 + amplitude at onset.
    let activity: Vec<Vec<f64>> = neurons
        .iter()
        .map(|n| {
            let mut a = vec![1.0; t_len];
            for &s in &n.truth.spikes {
                for (k, &r) in n.kernel.iter().enumerate() {
                    if s + k < t_len {
                        a[s + k] += config.spike_amplitude * r;
                    }
                }
            }
            a
        })
        .collect();

    let mut resting = background.clone();
    for n in &neurons {
        for &(ci, wgt) in &n.pixels {
            resting[ci] += (n.brightness * wgt as f64) as f32;
        }
    }

    let noise_sd = config.noise * BASE_LEVEL;
    let mut data = vec![0.0f32; t_len * h * w];
    let mut scene = resting.clone();
    for t in 0..t_len {
        let mut touched = Vec::new();
        for (n, act) in neurons.iter().zip(&activity) {
            let extra = act[t] - 1.0;
            if extra == 0.0 {
                continue;
            }
            for &(ci, wgt) in &n.pixels {
                scene[ci] += (n.brightness * extra * wgt as f64) as f32;
                touched.push(ci);
            }
        }
        let (mx, my) = motion[t];
        let frame = &mut data[t * h * w..(t + 1) * h * w];
        for y in 0..h {
            let sy = (y as i64 - my as i64 + pad as i64) as usize;
            for x in 0..w {
                let sx = (x as i64 - mx as i64 + pad as i64) as usize;
                let signal = scene[sy * canvas.width + sx] as f64;
                let var = noise_sd * noise_sd * (0.5 + 0.5 * signal / BASE_LEVEL);
                let z: f64 = StandardNormal.sample(&mut rng);
                frame[y * w + x] = (signal + var.sqrt() * z).max(0.0) as f32;
            }
        }
        for ci in touched {
            scene[ci] = resting[ci];
        }
    }

    let footprints: Vec<MaskImage> = neurons.iter().map(|n| n.mask.clone()).collect();
    for (n, act) in neurons.iter_mut().zip(&activity) {
        // Noise-free mean fluorescence over the footprint at zero displacement.
        let idx = n.mask.indices();
        let (mut rest, mut gain) = (0.0, 0.0);
        let weights: std::collections::HashMap<usize, f32> = n.pixels.iter().copied().collect();
        for &i in &idx {
            let (y, x) = (i / w, i % w);
            let ci = (y + pad) * canvas.width + x + pad;
            rest += resting[ci] as f64;
            gain += n.brightness * weights.get(&ci).copied().unwrap_or(0.0) as f64;
        }
        let m = idx.len().max(1) as f64;
        n.truth.fluorescence = act.iter().map(|a| (rest + gain * (a - 1.0)) / m).collect();
    }

    let segment_len = DEFAULT_SEGMENT_LEN;
    let k = segment_count(t_len, segment_len);
    let segment_masks = (0..k)
        .map(|s| {
            let range = s * segment_len..((s + 1) * segment_len).min(t_len);
            let mut m = MaskImage::new(h, w);
            for n in &neurons {
                if n.truth.spikes.iter().any(|t| range.contains(t)) {
                    for (b, &f) in m.bits.iter_mut().zip(&n.mask.bits) {
                        *b |= f;
                    }
                }
            }
            m
        })
        .collect();

    let video = Video::new(t_len, h, w, data, Some(config.frame_rate))?;
    let truth = GroundTruth {
        neurons: neurons.into_iter().map(|n| n.truth).collect(),
        footprints,
        motion,
        segment_len,
        segment_masks,
    };
    Ok((video, truth))
}

/// Write the simulated video and its ground truth into `dir`:
/// `video.vsegv1`, `gt.json`, `footprints.tif` and `segmask.tif`.
pub fn write_scene(
    dir: &Path,
    video: &Video,
    truth: &GroundTruth,
    config: &SceneConfig,
    offset: Option<(i32, i32)>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_raw_video(video, &dir.join("video.vsegv1"))?;
    let record = truth.record(video, config, offset);
    let gt_path = dir.join("gt.json");
    std::fs::write(
        &gt_path,
        serde_json::to_string(&record).expect("ground truth serializes"),
    )
    .map_err(|e| Error::io(&gt_path, e))?;
    save_masks(&truth.footprints, dir.join("footprints.tif"))?;
    let seg = match offset {
        Some(o) => truth.segment_masks_at(o),
        None => truth.segment_masks.clone(),
    };
    save_masks(&seg, dir.join("segmask.tif"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub index: usize,
    /// Per-video directory name.
    pub video: String,
    /// Segment index of the summary pair.
    pub pair: usize,
    /// Top-left crop origin.
    pub x: usize,
    pub y: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub videos: Vec<String>,
    pub patch_size: usize,
    pub segment_len: usize,
    pub patches_per_pair: usize,
    pub patches: Vec<PatchRecord>,
    pub validation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub videos: usize,
    pub patches_per_pair: usize,
    pub scene: SceneConfig,
    pub motion: MotionConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            videos: 1000,
            patches_per_pair: 10,
            scene: SceneConfig::default(),
            motion: MotionConfig::default(),
        }
    }
}

/// Crop origins for one summary pair: half biased towards spiking pixels,
/// half uniform.
pub fn sample_patches(target: &MaskImage, count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let (h, w) = (target.height, target.width);
    let positives = target.indices();
    (0..count)
        .map(|_| {
            let biased = rng.random_bool(0.5);
            if biased && !positives.is_empty() {
                let p = positives[rng.random_range(0..positives.len())];
                let (py, px) = (p / w, p % w);
                let x = rng.random_range(px.saturating_sub(PATCH - 1)..=px.min(w - PATCH));
                let y = rng.random_range(py.saturating_sub(PATCH - 1)..=py.min(h - PATCH));
                (x, y)
            } else {
                (rng.random_range(0..=w - PATCH), rng.random_range(0..=h - PATCH))
            }
        })
        .collect()
}

fn video_dir_name(i: usize) -> String {
    format!("video_{i:04}")
}

/// One video of the training set: simulate, correct, summarize, align the
/// targets with the corrected coordinates, and sample patches.
fn generate_one(out_dir: &Path, i: usize, config: &DatasetConfig) -> Result<Vec<(usize, usize, usize)>> {
    let scene = SceneConfig {
        seed: config.scene.seed + i as u64,
        ..config.scene.clone()
    };
    let (video, truth) = synthesize(&scene)?;
    let (corrected, estimates) = correct_motion(&video, &config.motion)?;
    let offset = pixel_offset(reference_offset(&truth.motion, &estimates));
    let dir = out_dir.join(video_dir_name(i));
    write_scene(&dir, &video, &truth, &scene, Some(offset))?;

    let pairs = summarize(&corrected, truth.segment_len)?;
    let mut pages = Vec::with_capacity(2 * pairs.len());
    let n = video.pixels_per_frame();
    for p in &pairs {
        let norm = normalize_pair(p);
        pages.push(Image::from_vec(video.height, video.width, norm[..n].to_vec())?);
        pages.push(Image::from_vec(video.height, video.width, norm[n..].to_vec())?);
    }
    save_image_stack(&pages, None, &dir.join("summaries.tif"))?;

    let targets = truth.segment_masks_at(offset);
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x5eed_7a7c);
    let mut out = Vec::new();
    for (pi, target) in targets.iter().enumerate() {
        for (x, y) in sample_patches(target, config.patches_per_pair, &mut rng) {
            out.push((pi, x, y));
        }
    }
    Ok(out)
}

/// Generate the patch dataset consumed by the trainer and write
/// `manifest.json` at the top of `out_dir`.
pub fn generate_training_set(config: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir: PathBuf = out_dir.as_ref().to_path_buf();
    config.scene.validate()?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let per_video: Vec<Vec<(usize, usize, usize)>> = (0..config.videos)
        .into_par_iter()
        .map(|i| generate_one(&out_dir, i, config))
        .collect::<Result<_>>()?;

    let mut patches = Vec::new();
    for (i, list) in per_video.into_iter().enumerate() {
        for (pair, x, y) in list {
            let index = patches.len();
            patches.push(PatchRecord {
                index,
                video: video_dir_name(i),
                pair,
                x,
                y,
                split: if index % 5 == 4 {
                    Split::Validation
                } else {
                    Split::Train
                },
            });
        }
    }
    let manifest = DatasetManifest {
        videos: (0..config.videos).map(video_dir_name).collect(),
        patch_size: PATCH,
        segment_len: DEFAULT_SEGMENT_LEN,
        patches_per_pair: config.patches_per_pair,
        validation: patches.iter().filter(|p| p.split == Split::Validation).count(),
        patches,
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig {
            frames: 120,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn zero_neurons_have_empty_truth() {
        let cfg = SceneConfig {
            neurons: [0, 0],
            ..small()
        };
        let (v, gt) = synthesize(&cfg).unwrap();
        assert_eq!(v.frames, 120);
        assert!(gt.footprints.is_empty());
        assert!(gt.segment_masks.iter().all(|m| m.is_empty()));
    }

    #[test]
    fn same_seed_is_identical() {
        let (a, ga) = synthesize(&small()).unwrap();
        let (b, gb) = synthesize(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let (c, _) = synthesize(&SceneConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn motion_stays_within_amplitude() {
        let (_, gt) = synthesize(&small()).unwrap();
        assert!(gt.motion.iter().all(|&(x, y)| x.abs() <= 5 && y.abs() <= 5));
        assert_eq!(gt.motion.len(), 120);
    }

    #[test]
    fn infeasible_placement_is_an_error() {
        let cfg = SceneConfig {
            neurons: [200, 200],
            neuron_radius: [12.0, 12.0],
            ..small()
        };
        assert!(synthesize(&cfg).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SceneConfig { height: 32, ..small() }.validate().is_err());
        assert!(SceneConfig {
            neurons: [5, 2],
            ..small()
        }
        .validate()
        .is_err());
        assert!(SceneConfig { noise: -1.0, ..small() }.validate().is_err());
    }

    #[test]
    fn offset_is_median_of_differences() {
        let truth = vec![(2, 1), (3, 1), (2, 2), (4, 0), (5, 5)];
        let est: Vec<MotionEstimate> = [(1.5, 0.0), (2.5, 0.0), (1.5, 1.0), (0.0, 0.0), (4.5, 4.0)]
            .iter()
            .map(|&(x, y)| MotionEstimate {
                vector: crate::motion::MotionVector {
                    dx: f64::floor(x) as i32,
                    dy: f64::floor(y) as i32,
                    sub_x: (x - f64::floor(x)) as f32,
                    sub_y: (y - f64::floor(y)) as f32,
                },
                confidence: 1.0,
            })
            .collect();
        assert_eq!(reference_offset(&truth, &est), [0.5, 1.0]);
        assert_eq!(pixel_offset([0.4, -1.6]), (0, -2));
    }

    #[test]
    fn patches_stay_inside_and_hit_targets() {
        let mut target = MaskImage::new(128, 128);
        target.set(100, 3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let origins = sample_patches(&target, 200, &mut rng);
        let mut hits = 0;
        for &(x, y) in &origins {
            assert!(x + PATCH <= 128 && y + PATCH <= 128);
            hits += (x <= 3 && y <= 100 && y + PATCH > 100) as usize;
        }
        assert!(hits >= 80, "{hits}");
    }
}

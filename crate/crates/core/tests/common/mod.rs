//! Independent reference implementations shared by the integration tests.
//! They favour the most literal formulation (double precision, no tables,
//! no reuse of library internals) over speed.

#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltseg::unet::WeightBundle;
use voltseg::video_io::{Image, MaskImage, Video};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: f32) -> Image {
    Image {
        height: h,
        width: w,
        data: (0..h * w).map(|_| rng.random::<f32>() * scale).collect(),
    }
}

pub fn random_video(rng: &mut ChaCha8Rng, t: usize, h: usize, w: usize) -> Video {
    let data = (0..t * h * w).map(|_| rng.random::<f32>() * 100.0).collect();
    Video::new(t, h, w, data, Some(100.0)).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> MaskImage {
    MaskImage {
        height: h,
        width: w,
        bits: (0..h * w).map(|_| rng.random_bool(p)).collect(),
    }
}

pub fn rect_sum(img: &Image, y: usize, x: usize, h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for yy in y..y + h {
        for xx in x..x + w {
            s += img.get(yy, xx) as f64;
        }
    }
    s
}

/// The ZNCC formula evaluated directly in f64.
pub fn zncc_direct(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    if da <= 1e-12 * n || db <= 1e-12 * n {
        return 0.0;
    }
    num / (da * db).sqrt()
}

pub fn window(img: &Image, x: isize, y: isize, p: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(p * p);
    for yy in 0..p {
        for xx in 0..p {
            v.push(img.get((y + yy as isize) as usize, (x + xx as isize) as usize) as f64);
        }
    }
    v
}

/// Mean over patch origins of the ZNCC between the reference patch and the
/// frame window displaced by `(dx, dy)`.
pub fn naive_score(reference: &Image, frame: &Image, origins: &[(usize, usize)], p: usize, dx: i32, dy: i32) -> f64 {
    let mut s = 0.0;
    for &(x, y) in origins {
        let r = window(reference, x as isize, y as isize, p);
        let f = window(frame, x as isize + dx as isize, y as isize + dy as isize, p);
        s += zncc_direct(&r, &f);
    }
    s / origins.len() as f64
}

/// 2-D Gaussian blur by direct summation, kernel truncated at ceil(3 sigma)
/// and renormalized, edges replicated.
pub fn gaussian_direct(img: &Image, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let (h, w) = (img.height as isize, img.width as isize);
    let mut weights = Vec::new();
    let mut total = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let g = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            weights.push((dy, dx, g));
            total += g;
        }
    }
    let mut out = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(dy, dx, g) in &weights {
                let sy = (y + dy).clamp(0, h - 1) as usize;
                let sx = (x + dx).clamp(0, w - 1) as usize;
                acc += g * img.get(sy, sx) as f64;
            }
            out[(y * w + x) as usize] = acc / total;
        }
    }
    out
}

pub fn mean_frames(frames: &[Image]) -> Vec<f64> {
    let n = frames[0].data.len();
    (0..n)
        .map(|i| frames.iter().map(|f| f.data[i] as f64).sum::<f64>() / frames.len() as f64)
        .collect()
}

/// Max minus median of Gaussian-smoothed frames, full sort per pixel.
pub fn max_minus_median_direct(frames: &[Image], sigma: f64) -> Vec<f64> {
    let smoothed: Vec<Vec<f64>> = frames.iter().map(|f| gaussian_direct(f, sigma)).collect();
    let n = smoothed[0].len();
    (0..n)
        .map(|i| {
            let mut s: Vec<f64> = smoothed.iter().map(|f| f[i]).collect();
            s.sort_by(|a, b| a.total_cmp(b));
            let m = s.len();
            let median = if m % 2 == 1 {
                s[m / 2]
            } else {
                0.5 * (s[m / 2 - 1] + s[m / 2])
            };
            s[m - 1] - median
        })
        .collect()
}

/// 8-connected component sizes by breadth-first flood fill, sorted.
pub fn flood_fill_sizes(mask: &MaskImage) -> Vec<usize> {
    let (h, w) = (mask.height as isize, mask.width as isize);
    let mut seen = vec![false; mask.bits.len()];
    let mut sizes = Vec::new();
    for start in 0..mask.bits.len() {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = ((i as isize) / w, (i as isize) % w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h || nx >= w {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if mask.bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable();
    sizes
}

pub fn iou_count(a: &MaskImage, b: &MaskImage) -> f64 {
    let inter = a.bits.iter().zip(&b.bits).filter(|(x, y)| **x && **y).count();
    let union = a.bits.iter().zip(&b.bits).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Largest number of one-to-one pairs with IoU >= threshold, and the best
/// total IoU among assignments achieving it, by trying every injection.
pub fn exhaustive_matching(ious: &[Vec<f64>], threshold: f64) -> (usize, f64) {
    fn go(
        row: usize,
        ious: &[Vec<f64>],
        used: &mut Vec<bool>,
        threshold: f64,
        count: usize,
        total: f64,
        best: &mut (usize, f64),
    ) {
        if row == ious.len() {
            if count > best.0 || (count == best.0 && total > best.1) {
                *best = (count, total);
            }
            return;
        }
        go(row + 1, ious, used, threshold, count, total, best);
        for j in 0..used.len() {
            if !used[j] && ious[row][j] >= threshold {
                used[j] = true;
                go(row + 1, ious, used, threshold, count + 1, total + ious[row][j], best);
                used[j] = false;
            }
        }
    }
    let cols = ious.first().map_or(0, |r| r.len());
    let mut best = (0, 0.0);
    go(0, ious, &mut vec![false; cols], threshold, 0, 0.0, &mut best);
    best
}

// Direct-convolution U-Net in f64 over channel-major tensors.

struct Tensor3 {
    c: usize,
    s: usize,
    v: Vec<f64>,
}

fn conv_direct(x: &Tensor3, bundle: &WeightBundle, name: &str, relu: bool) -> Tensor3 {
    let k = bundle.get(&format!("{name}.kernel")).unwrap();
    let b = bundle.get(&format!("{name}.bias")).unwrap();
    let (co, ci, kh) = (k.shape[0], k.shape[1], k.shape[2]);
    assert_eq!(ci, x.c);
    let r = (kh / 2) as isize;
    let s = x.s as isize;
    let mut out = vec![0.0; co * x.s * x.s];
    for o in 0..co {
        for y in 0..s {
            for xx in 0..s {
                let mut acc = b.values[o] as f64;
                for i in 0..ci {
                    for ky in 0..kh as isize {
                        for kx in 0..kh as isize {
                            let (sy, sx) = (y + ky - r, xx + kx - r);
                            if sy < 0 || sx < 0 || sy >= s || sx >= s {
                                continue;
                            }
                            let wv = k.values[((o * ci + i) * kh + ky as usize) * kh + kx as usize] as f64;
                            acc += wv * x.v[(i * x.s + sy as usize) * x.s + sx as usize];
                        }
                    }
                }
                out[(o * x.s + y as usize) * x.s + xx as usize] = if relu { acc.max(0.0) } else { acc };
            }
        }
    }
    Tensor3 { c: co, s: x.s, v: out }
}

fn pool(x: &Tensor3) -> Tensor3 {
    let s = x.s / 2;
    let mut v = vec![0.0; x.c * s * s];
    for c in 0..x.c {
        for y in 0..s {
            for xx in 0..s {
                let at = |dy: usize, dx: usize| x.v[(c * x.s + 2 * y + dy) * x.s + 2 * xx + dx];
                v[(c * s + y) * s + xx] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    }
    Tensor3 { c: x.c, s, v }
}

fn up_concat(skip: &Tensor3, low: &Tensor3) -> Tensor3 {
    let s = skip.s;
    let mut v = skip.v.clone();
    for c in 0..low.c {
        for y in 0..s {
            for x in 0..s {
                v.push(low.v[(c * low.s + y / 2) * low.s + x / 2]);
            }
        }
    }
    Tensor3 {
        c: skip.c + low.c,
        s,
        v,
    }
}

/// Probability map of a 2x64x64 patch, evaluated layer by layer.
pub fn unet_direct(bundle: &WeightBundle, patch: &[f32]) -> Vec<f64> {
    let block = |x: &Tensor3, name: &str| {
        let a = conv_direct(x, bundle, &format!("{name}.conv1"), true);
        conv_direct(&a, bundle, &format!("{name}.conv2"), true)
    };
    let input = Tensor3 {
        c: 2,
        s: 64,
        v: patch.iter().map(|&v| v as f64).collect(),
    };
    let e1 = block(&input, "enc1");
    let e2 = block(&pool(&e1), "enc2");
    let e3 = block(&pool(&e2), "enc3");
    let d2 = block(&up_concat(&e2, &e3), "dec2");
    let d1 = block(&up_concat(&e1, &d2), "dec1");
    let logits = conv_direct(&d1, bundle, "out.conv", false);
    logits.v.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect()
}

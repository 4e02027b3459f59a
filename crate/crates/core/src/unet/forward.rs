//! Forward pass. Convolutions are lowered to im2col + SGEMM.

use super::arch::{define_architecture, PATCH, WIDTHS};
use super::weights::WeightBundle;
use crate::error::{Error, Result};

/// Sigmoid outputs are clamped to this margin so probabilities stay inside
/// the open unit interval after `f32` rounding.
const PROB_EPS: f32 = 1e-7;

#[derive(Debug, Clone)]
struct Conv {
    in_ch: usize,
    out_ch: usize,
    k: usize,
    /// `(out, in * k * k)` row-major, i.e. the flattened OIHW kernel.
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Conv {
    fn from_bundle(bundle: &WeightBundle, name: &str) -> Result<Self> {
        let arch = define_architecture();
        let spec = arch
            .conv(name)
            .ok_or_else(|| Error::Config(format!("unknown layer {name}")))?;
        let kernel = bundle
            .get(&spec.kernel_name())
            .ok_or_else(|| Error::Config(format!("missing tensor {}", spec.kernel_name())))?;
        let bias = bundle
            .get(&spec.bias_name())
            .ok_or_else(|| Error::Config(format!("missing tensor {}", spec.bias_name())))?;
        if kernel.shape != spec.kernel_shape() || bias.shape != [spec.out_channels] {
            return Err(Error::Config(format!(
                "layer {name}: kernel {:?} / bias {:?} do not match {:?}",
                kernel.shape,
                bias.shape,
                spec.kernel_shape()
            )));
        }
        Ok(Conv {
            in_ch: spec.in_channels,
            out_ch: spec.out_channels,
            k: spec.kernel,
            weight: kernel.values.clone(),
            bias: bias.values.clone(),
        })
    }
}

/// Reusable scratch buffers for one thread.
#[derive(Debug, Default)]
pub struct Workspace {
    col: Vec<f32>,
}

/// A U-Net with validated, inference-ready parameters. Immutable and
/// shareable across threads.
#[derive(Debug, Clone)]
pub struct UNet {
    enc: [[Conv; 2]; 3],
    dec2: [Conv; 2],
    dec1: [Conv; 2],
    out: Conv,
}

impl UNet {
    pub fn new(bundle: &WeightBundle) -> Result<Self> {
        bundle.validate()?;
        let c = |n: &str| Conv::from_bundle(bundle, n);
        Ok(UNet {
            enc: [
                [c("enc1.conv1")?, c("enc1.conv2")?],
                [c("enc2.conv1")?, c("enc2.conv2")?],
                [c("enc3.conv1")?, c("enc3.conv2")?],
            ],
            dec2: [c("dec2.conv1")?, c("dec2.conv2")?],
            dec1: [c("dec1.conv1")?, c("dec1.conv2")?],
            out: c("out.conv")?,
        })
    }

    /// `patch` is `2 x 64 x 64`, channel-major. Returns `64 x 64`
    /// probabilities in (0, 1).
    pub fn forward(&self, patch: &[f32]) -> Result<Vec<f32>> {
        self.forward_with(patch, &mut Workspace::default())
    }

    pub fn forward_with(&self, patch: &[f32], ws: &mut Workspace) -> Result<Vec<f32>> {
        let n = PATCH * PATCH;
        if patch.len() != 2 * n {
            return Err(Error::DimensionMismatch(format!(
                "U-Net input must be 2x{PATCH}x{PATCH} = {} values, got {}",
                2 * n,
                patch.len()
            )));
        }
        let [w1, w2, _] = WIDTHS;
        let s1 = PATCH;
        let s2 = PATCH / 2;
        let s3 = PATCH / 4;

        let e1 = self.block(&self.enc[0], patch, s1, ws);
        let p1 = max_pool2(&e1, w1, s1);
        let e2 = self.block(&self.enc[1], &p1, s2, ws);
        let p2 = max_pool2(&e2, w2, s2);
        let e3 = self.block(&self.enc[2], &p2, s3, ws);

        let mut cat2 = e2;
        upsample2_append(&e3, WIDTHS[2], s3, &mut cat2);
        let d2 = self.block(&self.dec2, &cat2, s2, ws);

        let mut cat1 = e1;
        upsample2_append(&d2, w2, s2, &mut cat1);
        let d1 = self.block(&self.dec1, &cat1, s1, ws);

        let logits = conv(&self.out, &d1, s1, ws, false);
        Ok(logits
            .into_iter()
            .map(|z| sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS))
            .collect())
    }

    fn block(&self, convs: &[Conv; 2], input: &[f32], size: usize, ws: &mut Workspace) -> Vec<f32> {
        let a = conv(&convs[0], input, size, ws, true);
        conv(&convs[1], &a, size, ws, true)
    }
}

fn sigmoid(z: f32) -> f32 {
    (1.0 / (1.0 + (-(z as f64)).exp())) as f32
}

/// Output pixels lowered per SGEMM call; keeps the column buffer in cache.
const BLOCK_PIXELS: usize = 256;

/// Same-size convolution with zero padding `k / 2`, optional ReLU.
fn conv(layer: &Conv, input: &[f32], size: usize, ws: &mut Workspace, relu: bool) -> Vec<f32> {
    let hw = size * size;
    debug_assert_eq!(input.len(), layer.in_ch * hw);
    let kk = layer.k * layer.k;
    let rows = layer.in_ch * kk;
    let mut out = vec![0.0f32; layer.out_ch * hw];

    let band = (BLOCK_PIXELS / size).max(1);
    let mut y0 = 0;
    while y0 < size {
        let y1 = (y0 + band).min(size);
        let n = (y1 - y0) * size;
        let (b, ldb): (&[f32], usize) = if layer.k == 1 {
            (&input[y0 * size..], hw)
        } else {
            im2col(input, layer.in_ch, size, layer.k, y0..y1, &mut ws.col);
            (&ws.col[..rows * n], n)
        };
        // SAFETY: A is out_ch x rows (stride rows), B is rows x n (stride
        // ldb), C is out_ch x n inside `out` (stride hw); all in bounds.
        unsafe {
            matrixmultiply::sgemm(
                layer.out_ch,
                rows,
                n,
                1.0,
                layer.weight.as_ptr(),
                rows as isize,
                1,
                b.as_ptr(),
                ldb as isize,
                1,
                0.0,
                out.as_mut_ptr().add(y0 * size),
                hw as isize,
                1,
            );
        }
        y0 = y1;
    }
    for (plane, &bias) in out.chunks_exact_mut(hw).zip(&layer.bias) {
        if relu {
            plane.iter_mut().for_each(|v| *v = (*v + bias).max(0.0));
        } else {
            plane.iter_mut().for_each(|v| *v += bias);
        }
    }
    out
}

/// Column matrix for output rows `ys`: row `(c * k + ky) * k + kx` holds
/// channel `c` shifted by `(ky - r, kx - r)` with zeros outside the image.
fn im2col(input: &[f32], channels: usize, size: usize, k: usize, ys: std::ops::Range<usize>, col: &mut Vec<f32>) {
    let hw = size * size;
    let n = ys.len() * size;
    let r = (k / 2) as isize;
    col.resize(channels * k * k * n, 0.0);
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - r;
            for kx in 0..k {
                let dx = kx as isize - r;
                let row = ((c * k + ky) * k + kx) * n;
                let dst = &mut col[row..row + n];
                for (i, y) in ys.clone().enumerate() {
                    let out_row = &mut dst[i * size..(i + 1) * size];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= size as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * size..(sy as usize + 1) * size];
                    // out_row[x] = src[x + dx] where in range.
                    let (lo, hi) = if dx >= 0 {
                        (0usize, size - dx as usize)
                    } else {
                        ((-dx) as usize, size)
                    };
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let s0 = (lo as isize + dx) as usize;
                    out_row[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                }
            }
        }
    }
}

fn max_pool2(input: &[f32], channels: usize, size: usize) -> Vec<f32> {
    let half = size / 2;
    let mut out = vec![0.0f32; channels * half * half];
    for c in 0..channels {
        let plane = &input[c * size * size..(c + 1) * size * size];
        let dst = &mut out[c * half * half..(c + 1) * half * half];
        for y in 0..half {
            let r0 = &plane[2 * y * size..(2 * y + 1) * size];
            let r1 = &plane[(2 * y + 1) * size..(2 * y + 2) * size];
            for x in 0..half {
                dst[y * half + x] = r0[2 * x].max(r0[2 * x + 1]).max(r1[2 * x]).max(r1[2 * x + 1]);
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling, appended channel planes to `dst`.
fn upsample2_append(input: &[f32], channels: usize, size: usize, dst: &mut Vec<f32>) {
    let big = size * 2;
    dst.reserve(channels * big * big);
    for c in 0..channels {
        let plane = &input[c * size * size..(c + 1) * size * size];
        for y in 0..big {
            let src = &plane[(y / 2) * size..(y / 2 + 1) * size];
            dst.extend(src.iter().flat_map(|&v| [v, v]));
        }
    }
}

/// Forward pass of a single patch with the given weights.
pub fn forward(weights: &WeightBundle, patch: &[f32]) -> Result<Vec<f32>> {
    UNet::new(weights)?.forward(patch)
}

//! PNG overlay of predicted and ground-truth masks.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use voltseg::video_io::MaskImage;
use voltseg::{Error, Result};

const PRED: [u8; 3] = [230, 60, 40];
const TRUTH: [u8; 3] = [40, 200, 80];
const BOTH: [u8; 3] = [240, 220, 60];

/// RGB image: predictions in red, ground truth in green, overlap in yellow,
/// each pixel drawn as a `scale` x `scale` block.
pub fn render(preds: &[MaskImage], gts: &[MaskImage], height: usize, width: usize, scale: usize) -> Vec<u8> {
    let union = |masks: &[MaskImage]| {
        let mut u = vec![false; height * width];
        for m in masks.iter().filter(|m| m.height == height && m.width == width) {
            for i in m.indices() {
                u[i] = true;
            }
        }
        u
    };
    let (p, g) = (union(preds), union(gts));
    let (w, h) = (width * scale, height * scale);
    let mut rgb = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let i = (y / scale) * width + x / scale;
            let color = match (p[i], g[i]) {
                (true, true) => BOTH,
                (true, false) => PRED,
                (false, true) => TRUTH,
                (false, false) => continue,
            };
            let o = (y * w + x) * 3;
            rgb[o..o + 3].copy_from_slice(&color);
        }
    }
    rgb
}

pub fn write_png(path: &Path, rgb: &[u8], width: usize, height: usize) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let file = File::create(path).map_err(io)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let encode = |e: png::EncodingError| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut writer = encoder.write_header().map_err(encode)?;
    writer.write_image_data(rgb).map_err(encode)
}

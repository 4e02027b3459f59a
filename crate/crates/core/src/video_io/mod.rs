//! In-memory video and mask model plus the on-disk stack formats.
//!
//! Two containers are supported: multi-page grayscale TIFF (the interchange
//! format of most voltage-imaging datasets) and the headered raw `VSEGV1`
//! format used as the simulator's fast path. Integer samples are widened to
//! `f32` without any rescaling.

mod raw;
mod tiff_io;

use std::path::Path;

use crate::error::{Error, Result};

pub use raw::{read_raw_video, write_raw_video, RAW_MAGIC};
pub use tiff_io::{load_image_stack, save_image_stack};

/// A single-channel `f32` image in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Image {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} needs {} samples, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Image { height, width, data })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

/// Binary image. Serialized as 0/255 8-bit pages.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskImage {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl MaskImage {
    pub fn new(height: usize, width: usize) -> Self {
        MaskImage {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        MaskImage {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &MaskImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Row-major indices of set pixels.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Translate content by `(dx, dy)`; pixels shifted in from outside are unset.
    pub fn translated(&self, dx: i32, dy: i32) -> MaskImage {
        let mut out = MaskImage::new(self.height, self.width);
        for y in 0..self.height {
            let sy = y as i64 - dy as i64;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            for x in 0..self.width {
                let sx = x as i64 - dx as i64;
                if sx >= 0 && sx < self.width as i64 {
                    out.bits[y * self.width + x] = self.bits[sy as usize * self.width + sx as usize];
                }
            }
        }
        out
    }
}

/// A grayscale video stack of `frames` x `height` x `width` samples, t-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub frame_rate: Option<f64>,
}

impl Video {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f32>, frame_rate: Option<f64>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "video dimensions must be positive, got {frames}x{height}x{width}"
            )));
        }
        if data.len() != frames * height * width {
            return Err(Error::DimensionMismatch(format!(
                "video {frames}x{height}x{width} needs {} samples, got {}",
                frames * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric(format!(
                "sample {i} is {} (intensities must be finite and non-negative)",
                data[i]
            )));
        }
        Ok(Video {
            frames,
            height,
            width,
            data,
            frame_rate: frame_rate.filter(|r| *r > 0.0 && r.is_finite()),
        })
    }

    pub fn from_frames(frames: &[Image], frame_rate: Option<f64>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("video needs at least one frame".into()))?;
        let mut data = Vec::with_capacity(frames.len() * first.data.len());
        for (t, f) in frames.iter().enumerate() {
            if !f.same_dims(first) {
                return Err(Error::DimensionMismatch(format!(
                    "frame {t} is {}x{}, expected {}x{}",
                    f.height, f.width, first.height, first.width
                )));
            }
            data.extend_from_slice(&f.data);
        }
        Video::new(frames.len(), first.height, first.width, data, frame_rate)
    }

    #[inline]
    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.pixels_per_frame();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_image(&self, t: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.frame(t).to_vec(),
        }
    }

    pub fn frame_images(&self) -> Vec<Image> {
        (0..self.frames).map(|t| self.frame_image(t)).collect()
    }

    /// Recording duration in seconds, when the frame rate is known.
    pub fn duration(&self) -> Option<f64> {
        self.frame_rate.map(|r| self.frames as f64 / r)
    }
}

fn is_tiff_path(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("tif") | Some("tiff")
    )
}

fn check_path(path: &Path) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    Ok(())
}

/// Load a video from a multi-page TIFF or a `VSEGV1` raw file.
///
/// The container is detected from the leading bytes, not the extension.
pub fn load_video(path: impl AsRef<Path>) -> Result<Video> {
    let path = path.as_ref();
    check_path(path)?;
    let mut magic = [0u8; 8];
    {
        use std::io::Read;
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let n = f.read(&mut magic).map_err(|e| Error::io(path, e))?;
        if n < 4 {
            return Err(Error::format(path, "file too short to identify format"));
        }
    }
    if magic == RAW_MAGIC {
        return read_raw_video(path);
    }
    let (pages, frame_rate) = load_image_stack(path)?;
    let images: Vec<Image> = pages;
    if images.is_empty() {
        return Err(Error::format(path, "TIFF contains no pages"));
    }
    Video::from_frames(&images, frame_rate).map_err(|e| match e {
        Error::Numeric(m) => Error::format(path, m),
        other => other,
    })
}

/// Save a video; `.tif`/`.tiff` paths produce 32-bit float TIFF, anything
/// else the raw `VSEGV1` container.
pub fn save_video(video: &Video, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_path(path)?;
    if is_tiff_path(path) {
        save_image_stack(&video.frame_images(), video.frame_rate, path)
    } else {
        write_raw_video(video, path)
    }
}

/// Write masks as a paged 8-bit TIFF, one page per mask, 0/255 encoded.
///
/// An empty list produces a header-only container with no pages.
pub fn save_masks(masks: &[MaskImage], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_path(path)?;
    if let Some(first) = masks.first() {
        if let Some((i, m)) = masks.iter().enumerate().find(|(_, m)| !m.same_dims(first)) {
            return Err(Error::DimensionMismatch(format!(
                "mask {i} is {}x{}, expected {}x{}",
                m.height, m.width, first.height, first.width
            )));
        }
    }
    tiff_io::save_mask_stack(masks, path)
}

pub fn load_masks(path: impl AsRef<Path>) -> Result<Vec<MaskImage>> {
    let path = path.as_ref();
    check_path(path)?;
    tiff_io::load_mask_stack(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_rejects_bad_length() {
        assert!(Video::new(2, 2, 2, vec![0.0; 7], None).is_err());
        assert!(Video::new(0, 2, 2, vec![], None).is_err());
    }

    #[test]
    fn video_rejects_negative_samples() {
        assert!(matches!(
            Video::new(1, 1, 2, vec![1.0, -1.0], None),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn mask_translate() {
        let mut m = MaskImage::new(4, 4);
        m.set(1, 1, true);
        let t = m.translated(2, -1);
        assert!(t.get(0, 3));
        assert_eq!(t.count(), 1);
        assert_eq!(m.translated(5, 0).count(), 0);
    }
}

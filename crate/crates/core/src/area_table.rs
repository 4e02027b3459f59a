//! Summed-area tables of values and squared values.

use crate::video_io::Image;

/// Integral images with a zero top row and left column, so the table is
/// `(height + 1) x (width + 1)` and `sum[y][x]` holds the sum over all
/// pixels strictly above and left of `(y, x)`.
#[derive(Debug, Clone)]
pub struct AreaTables {
    height: usize,
    width: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl AreaTables {
    pub fn build(frame: &Image) -> Self {
        Self::from_slice(&frame.data, frame.height, frame.width)
    }

    pub fn from_slice(data: &[f32], height: usize, width: usize) -> Self {
        let stride = width + 1;
        let mut sum = vec![0.0f64; (height + 1) * stride];
        let mut sum_sq = vec![0.0f64; (height + 1) * stride];
        for y in 0..height {
            let mut row = 0.0f64;
            let mut row_sq = 0.0f64;
            let src = &data[y * width..(y + 1) * width];
            for (x, &s) in src.iter().enumerate() {
                let v = s as f64;
                row += v;
                row_sq += v * v;
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + row;
                sum_sq[i] = sum_sq[i - stride] + row_sq;
            }
        }
        AreaTables {
            height,
            width,
            sum,
            sum_sq,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    fn rect(table: &[f64], stride: usize, y: usize, x: usize, h: usize, w: usize) -> f64 {
        let a = table[y * stride + x];
        let b = table[y * stride + x + w];
        let c = table[(y + h) * stride + x];
        let d = table[(y + h) * stride + x + w];
        d - b - c + a
    }

    /// Sum over the `h x w` rectangle whose top-left pixel is `(y, x)`.
    #[inline]
    pub fn rect_sum(&self, y: usize, x: usize, h: usize, w: usize) -> f64 {
        debug_assert!(y + h <= self.height && x + w <= self.width);
        Self::rect(&self.sum, self.width + 1, y, x, h, w)
    }

    #[inline]
    pub fn rect_sum_sq(&self, y: usize, x: usize, h: usize, w: usize) -> f64 {
        debug_assert!(y + h <= self.height && x + w <= self.width);
        Self::rect(&self.sum_sq, self.width + 1, y, x, h, w)
    }

    /// Sum of squared deviations from the mean over a rectangle, clamped at 0.
    #[inline]
    pub fn rect_centered_sum_sq(&self, y: usize, x: usize, h: usize, w: usize) -> f64 {
        let n = (h * w) as f64;
        let s = self.rect_sum(y, x, h, w);
        (self.rect_sum_sq(y, x, h, w) - s * s / n).max(0.0)
    }
}

//! 8-connected region labeling and shape statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video_io::MaskImage;

/// One 8-connected region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn to_mask(&self, height: usize, width: usize) -> MaskImage {
        let mut m = MaskImage::new(height, width);
        for &i in &self.pixels {
            m.bits[i] = true;
        }
        m
    }
}

/// Label the set pixels of `mask` into 8-connected components, ordered by the
/// (top, left) corner of their bounding boxes.
pub fn connected_components(mask: &MaskImage) -> Vec<Component> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        pixels.sort_unstable();
        let top = pixels[0] / w;
        let bottom = pixels[pixels.len() - 1] / w;
        let left = pixels.iter().map(|&i| i % w).min().unwrap();
        let right = pixels.iter().map(|&i| i % w).max().unwrap();
        out.push(Component {
            pixels,
            top,
            left,
            bottom,
            right,
        });
    }
    out.sort_by_key(|c| (c.top, c.left));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub area: usize,
    /// Area over convex-hull area, in (0, 1].
    pub solidity: f64,
    /// Eccentricity of the second-moment ellipse, in [0, 1).
    pub eccentricity: f64,
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; counter-clockwise, no collinear points.
fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Number of pixels whose centres fall inside (or on) the convex hull of the
/// region's pixel centres.
fn convex_pixel_count(pixels: &[usize], width: usize) -> usize {
    let mut rows: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for &i in pixels {
        let (y, x) = (i / width, i % width);
        let e = rows.entry(y).or_insert((x, x));
        e.0 = e.0.min(x);
        e.1 = e.1.max(x);
    }
    // Row extremes are the only hull candidates.
    let mut pts = Vec::with_capacity(rows.len() * 2);
    for (&y, &(x0, x1)) in &rows {
        pts.extend([(x0 as i64, y as i64), (x1 as i64, y as i64)]);
    }
    let hull = convex_hull(pts);
    let (ymin, ymax) = (*rows.keys().next().unwrap(), *rows.keys().last().unwrap());
    let xmin = rows.values().map(|r| r.0).min().unwrap();
    let xmax = rows.values().map(|r| r.1).max().unwrap();
    let mut count = 0;
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            let c = (x as i64, y as i64);
            let inside = (0..hull.len()).all(|k| cross(hull[k], hull[(k + 1) % hull.len()], c) >= 0);
            if inside {
                count += 1;
            }
        }
    }
    count
}

pub fn region_stats(pixels: &[usize], width: usize) -> RegionStats {
    let area = pixels.len();
    if area == 0 {
        return RegionStats {
            area: 0,
            solidity: 0.0,
            eccentricity: 0.0,
        };
    }
    let n = area as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &i in pixels {
        sx += (i % width) as f64;
        sy += (i / width) as f64;
    }
    let (cx, cy) = (sx / n, sy / n);
    let (mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0);
    for &i in pixels {
        let (dx, dy) = ((i % width) as f64 - cx, (i / width) as f64 - cy);
        mxx += dx * dx;
        myy += dy * dy;
        mxy += dx * dy;
    }
    // Unit-square pixels contribute 1/12 of their own extent to each axis.
    let (mxx, myy, mxy) = (mxx / n + 1.0 / 12.0, myy / n + 1.0 / 12.0, mxy / n);
    let tr = mxx + myy;
    let disc = ((mxx - myy) * (mxx - myy) + 4.0 * mxy * mxy).sqrt();
    let (l1, l2) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
    let eccentricity = (1.0 - l2 / l1).max(0.0).sqrt();
    let solidity = area as f64 / convex_pixel_count(pixels, width) as f64;
    RegionStats {
        area,
        solidity: solidity.min(1.0),
        eccentricity,
    }
}

/// Area and shape bounds a region must satisfy to be considered a neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeFilter {
    pub min_area: usize,
    pub max_area: usize,
    pub min_solidity: f64,
    pub max_eccentricity: f64,
}

impl Default for ShapeFilter {
    fn default() -> Self {
        ShapeFilter {
            min_area: 40,
            max_area: 2000,
            min_solidity: 0.8,
            max_eccentricity: 0.95,
        }
    }
}

impl ShapeFilter {
    pub fn validate(&self) -> Result<()> {
        if self.min_area == 0 || self.max_area < self.min_area {
            return Err(Error::InvalidArgument(format!(
                "area bounds [{}, {}] invalid",
                self.min_area, self.max_area
            )));
        }
        if !(self.min_solidity > 0.0 && self.max_eccentricity > 0.0) {
            return Err(Error::InvalidArgument("shape bounds must be positive".into()));
        }
        Ok(())
    }

    pub fn accepts(&self, s: &RegionStats) -> bool {
        s.area >= self.min_area
            && s.area <= self.max_area
            && s.solidity >= self.min_solidity
            && s.eccentricity <= self.max_eccentricity
    }
}

/// Keep only the 8-connected regions that satisfy `filter`.
pub fn filter_regions(mask: &MaskImage, filter: &ShapeFilter) -> MaskImage {
    let mut out = MaskImage::new(mask.height, mask.width);
    for c in connected_components(mask) {
        // Cheap area test first; the hull is only needed for survivors.
        if c.area() < filter.min_area || c.area() > filter.max_area {
            continue;
        }
        if filter.accepts(&region_stats(&c.pixels, mask.width)) {
            for &i in &c.pixels {
                out.bits[i] = true;
            }
        }
    }
    out
}

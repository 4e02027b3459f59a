//! Neuron footprints from a sequence of probability maps.
//!
//! Each map is thresholded and cleaned of implausible shapes, the cleaned
//! masks are OR-ed over time, and every connected component of the union is
//! factorized separately: its pixels' probabilities across segments form a
//! small non-negative matrix `P ~ F A`, whose columns of `F` become the
//! footprints of the (possibly overlapping) neurons in that component.

mod nmf;
mod regions;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use nmf::{nmf, select_rank, ActivityMatrix, Factorization, NmfConfig};
pub use regions::{connected_components, filter_regions, region_stats, Component, RegionStats, ShapeFilter};

use crate::error::{Error, Result};
use crate::evaluation::iou;
use crate::unet::ProbabilityMap;
use crate::video_io::{save_masks, Image, MaskImage};

/// Pixels with `p >= threshold`.
pub fn binarize_map(map: &ProbabilityMap, threshold: f32) -> MaskImage {
    let v = &map.values;
    MaskImage {
        height: v.height,
        width: v.width,
        bits: v.data.iter().map(|&p| p >= threshold).collect(),
    }
}

/// Pixelwise OR.
pub fn aggregate_masks(masks: &[MaskImage]) -> Result<Option<MaskImage>> {
    let Some(first) = masks.first() else {
        return Ok(None);
    };
    let mut out = first.clone();
    for (i, m) in masks.iter().enumerate().skip(1) {
        if !m.same_dims(first) {
            return Err(Error::DimensionMismatch(format!(
                "mask {i} is {}x{}, expected {}x{}",
                m.height, m.width, first.height, first.width
            )));
        }
        for (o, &b) in out.bits.iter_mut().zip(&m.bits) {
            *o |= b;
        }
    }
    Ok(Some(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    pub threshold: f32,
    pub shape: ShapeFilter,
    pub nmf: NmfConfig,
    /// Footprint weights are binarized at this fraction of their maximum.
    pub footprint_level: f64,
    /// Footprints from the same component overlapping above this IoU merge.
    pub merge_iou: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            threshold: 0.5,
            shape: ShapeFilter::default(),
            nmf: NmfConfig::default(),
            footprint_level: 0.5,
            merge_iou: 0.6,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "probability threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        self.shape.validate()?;
        if self.nmf.max_rank == 0 || self.nmf.max_iters == 0 {
            return Err(Error::InvalidArgument("NMF rank and iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub id: usize,
    /// Index of the connected component of the aggregated mask it came from.
    pub component: usize,
    /// Frame-sized, zero outside the component.
    pub weights: Image,
    pub mask: MaskImage,
    /// Per-segment activity, length K.
    pub activity: Vec<f64>,
}

impl Footprint {
    pub fn bounding_box(&self) -> [usize; 4] {
        let idx = self.mask.indices();
        let w = self.mask.width;
        let top = idx.first().map(|i| i / w).unwrap_or(0);
        let bottom = idx.last().map(|i| i / w).unwrap_or(0);
        let left = idx.iter().map(|i| i % w).min().unwrap_or(0);
        let right = idx.iter().map(|i| i % w).max().unwrap_or(0);
        [top, left, bottom, right]
    }

    pub fn peak_segment(&self) -> usize {
        self.activity
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            )
            .0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FootprintSet {
    pub footprints: Vec<Footprint>,
}

impl FootprintSet {
    pub fn len(&self) -> usize {
        self.footprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.footprints.is_empty()
    }

    pub fn masks(&self) -> Vec<MaskImage> {
        self.footprints.iter().map(|f| f.mask.clone()).collect()
    }
}

/// Per-segment cleaned masks: threshold, then shape filter.
pub fn clean_masks(maps: &[ProbabilityMap], config: &ReconstructionConfig) -> Vec<MaskImage> {
    maps.par_iter()
        .map(|m| filter_regions(&binarize_map(m, config.threshold), &config.shape))
        .collect()
}

fn largest_region(mask: &MaskImage) -> Option<Component> {
    connected_components(mask)
        .into_iter()
        .fold(None, |best: Option<Component>, c| match best {
            Some(b) if b.area() >= c.area() => Some(b),
            _ => Some(c),
        })
}

fn component_footprints(
    comp: &Component,
    comp_index: usize,
    maps: &[ProbabilityMap],
    config: &ReconstructionConfig,
) -> Result<Vec<Footprint>> {
    let (h, w) = (maps[0].values.height, maps[0].values.width);
    let (m, k) = (comp.area(), maps.len());
    let mut data = Vec::with_capacity(m * k);
    for &px in &comp.pixels {
        data.extend(maps.iter().map(|map| map.values.data[px] as f64));
    }
    let p = ActivityMatrix::new(m, k, data)?;
    let (rank, fac) = select_rank(&p, &config.nmf)?;

    let mut found: Vec<Footprint> = Vec::new();
    for j in 0..rank {
        let f = fac.footprint(j);
        let peak = f.iter().copied().fold(0.0f64, f64::max);
        if !(peak > 0.0) {
            continue;
        }
        let mut weights = Image::new(h, w);
        let mut level_mask = MaskImage::new(h, w);
        for (&px, &v) in comp.pixels.iter().zip(&f) {
            weights.data[px] = v as f32;
            level_mask.bits[px] = v >= config.footprint_level * peak;
        }
        let Some(region) = largest_region(&level_mask) else {
            continue;
        };
        if !config.shape.accepts(&region_stats(&region.pixels, w)) {
            continue;
        }
        found.push(Footprint {
            id: 0,
            component: comp_index,
            weights,
            mask: region.to_mask(h, w),
            activity: fac.activity_row(j, k).to_vec(),
        });
    }

    // Merge near-duplicates, keeping the larger footprint.
    found.sort_by_key(|f| std::cmp::Reverse(f.mask.count()));
    let mut kept: Vec<Footprint> = Vec::new();
    for fp in found {
        if kept
            .iter()
            .all(|k| iou(&k.mask, &fp.mask).unwrap_or(0.0) <= config.merge_iou)
        {
            kept.push(fp);
        }
    }
    kept.sort_by_key(|f| {
        let b = f.bounding_box();
        (b[0], b[1])
    });
    Ok(kept)
}

/// Full footprint reconstruction from per-segment probability maps.
pub fn reconstruct_footprints(maps: &[ProbabilityMap], config: &ReconstructionConfig) -> Result<FootprintSet> {
    config.validate()?;
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one probability map".into()))?;
    if let Some(bad) = maps.iter().find(|m| !m.values.same_dims(&first.values)) {
        return Err(Error::DimensionMismatch(format!(
            "probability map {} differs in size",
            bad.segment_index
        )));
    }
    let cleaned = clean_masks(maps, config);
    let union = aggregate_masks(&cleaned)?.expect("non-empty");
    let comps = connected_components(&union);
    let per_comp: Vec<Vec<Footprint>> = comps
        .par_iter()
        .enumerate()
        .map(|(ci, c)| component_footprints(c, ci, maps, config))
        .collect::<Result<_>>()?;
    let mut footprints: Vec<Footprint> = per_comp.into_iter().flatten().collect();
    for (i, f) in footprints.iter_mut().enumerate() {
        f.id = i;
    }
    Ok(FootprintSet { footprints })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintRecord {
    pub id: usize,
    pub component: usize,
    /// `[top, left, bottom, right]`, inclusive.
    pub bbox: [usize; 4],
    pub area: usize,
    pub peak_segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintManifest {
    pub height: usize,
    pub width: usize,
    /// File name of the mask stack, relative to the manifest.
    pub masks: String,
    pub footprints: Vec<FootprintRecord>,
    /// Set when the run aborted before all stages finished.
    #[serde(default)]
    pub partial: bool,
}

impl FootprintSet {
    pub fn manifest(&self, height: usize, width: usize, masks_file: &str) -> FootprintManifest {
        FootprintManifest {
            height,
            width,
            masks: masks_file.to_string(),
            footprints: self
                .footprints
                .iter()
                .map(|f| FootprintRecord {
                    id: f.id,
                    component: f.component,
                    bbox: f.bounding_box(),
                    area: f.mask.count(),
                    peak_segment: f.peak_segment(),
                })
                .collect(),
            partial: false,
        }
    }

    /// Write `<dir>/footprints.tif` and `<dir>/footprints.json`. `partial`
    /// marks output of a run that did not finish.
    pub fn export(&self, dir: impl AsRef<Path>, height: usize, width: usize, partial: bool) -> Result<()> {
        let dir = dir.as_ref();
        save_masks(&self.masks(), dir.join("footprints.tif"))?;
        let mut manifest = self.manifest(height, width, "footprints.tif");
        manifest.partial = partial;
        let path = dir.join("footprints.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// Load the masks referenced by a footprint manifest (`footprints.json`).
pub fn load_manifest_masks(manifest_path: impl AsRef<Path>) -> Result<(FootprintManifest, Vec<MaskImage>)> {
    let path = manifest_path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: FootprintManifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let masks = crate::video_io::load_masks(dir.join(&manifest.masks))?;
    if masks.len() != manifest.footprints.len() {
        return Err(Error::format(
            path,
            format!(
                "manifest lists {} footprints but mask stack has {} pages",
                manifest.footprints.len(),
                masks.len()
            ),
        ));
    }
    Ok((manifest, masks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: Vec<f32>, h: usize, w: usize) -> ProbabilityMap {
        ProbabilityMap {
            segment_index: 0,
            values: Image::from_vec(h, w, values).unwrap(),
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        assert!(binarize_map(&map(vec![0.4; 9], 3, 3), 0.5).is_empty());
        assert_eq!(binarize_map(&map(vec![0.5; 9], 3, 3), 0.5).count(), 9);
    }

    #[test]
    fn aggregate_complementary_halves() {
        let mut a = MaskImage::new(4, 4);
        let mut b = MaskImage::new(4, 4);
        for i in 0..16 {
            if i < 8 {
                a.bits[i] = true
            } else {
                b.bits[i] = true
            }
        }
        assert_eq!(aggregate_masks(&[a, b]).unwrap().unwrap().count(), 16);
        assert!(aggregate_masks(&[MaskImage::new(2, 2), MaskImage::new(2, 3)]).is_err());
        assert!(aggregate_masks(&[]).unwrap().is_none());
        let empty = vec![MaskImage::new(3, 3); 4];
        assert!(aggregate_masks(&empty).unwrap().unwrap().is_empty());
    }

    #[test]
    fn all_zero_maps_give_no_footprints() {
        let maps: Vec<_> = (0..5)
            .map(|i| ProbabilityMap {
                segment_index: i,
                values: Image::new(32, 32),
            })
            .collect();
        let set = reconstruct_footprints(&maps, &ReconstructionConfig::default()).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn config_validation() {
        let c = ReconstructionConfig {
            threshold: 1.0,
            ..ReconstructionConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = ReconstructionConfig::default();
        c.shape.min_area = 0;
        assert!(c.validate().is_err());
    }
}

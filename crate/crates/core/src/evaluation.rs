//! Segmentation scoring and throughput reporting.

use std::time::Duration;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video_io::MaskImage;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;

/// Intersection over union; two empty masks score 0.
pub fn iou(a: &MaskImage, b: &MaskImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "iou of {}x{} and {}x{} masks",
            a.height, a.width, b.height, b.width
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub threshold: f64,
    pub matches: Vec<MatchedPair>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MatchReport {
    pub fn true_positives(&self) -> usize {
        self.matches.len()
    }
}

/// Fixed-point scale for IoU weights in the assignment problem.
const IOU_SCALE: f64 = 1e9;

/// One-to-one matching maximizing total IoU over pairs at or above
/// `threshold` (Hungarian method), then precision / recall / F1.
pub fn match_and_score(preds: &[MaskImage], gts: &[MaskImage], threshold: f64) -> Result<MatchReport> {
    let mut ious = vec![vec![0.0f64; gts.len()]; preds.len()];
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            ious[i][j] = iou(p, g)?;
        }
    }

    let mut matches = Vec::new();
    if !preds.is_empty() && !gts.is_empty() {
        let transpose = preds.len() > gts.len();
        let (rows, cols) = if transpose {
            (gts.len(), preds.len())
        } else {
            (preds.len(), gts.len())
        };
        let weight = |r: usize, c: usize| {
            let v = if transpose { ious[c][r] } else { ious[r][c] };
            if v >= threshold {
                (v * IOU_SCALE).round() as i64
            } else {
                0
            }
        };
        let data: Vec<i64> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| weight(r, c))
            .collect();
        let m = Matrix::from_vec(rows, cols, data).expect("matrix shape");
        let (_, assignment) = kuhn_munkres(&m);
        for (r, &c) in assignment.iter().enumerate() {
            let (pi, gi) = if transpose { (c, r) } else { (r, c) };
            let v = ious[pi][gi];
            if v >= threshold && v > 0.0 {
                matches.push(MatchedPair {
                    pred: pi,
                    gt: gi,
                    iou: v,
                });
            }
        }
        matches.sort_by_key(|m| m.pred);
    }

    let unmatched_preds = (0..preds.len())
        .filter(|i| !matches.iter().any(|m| m.pred == *i))
        .collect();
    let unmatched_gts = (0..gts.len()).filter(|j| !matches.iter().any(|m| m.gt == *j)).collect();
    let tp = matches.len() as f64;
    let precision = if preds.is_empty() { 0.0 } else { tp / preds.len() as f64 };
    let recall = if gts.is_empty() { 0.0 } else { tp / gts.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MatchReport {
        threshold,
        matches,
        unmatched_preds,
        unmatched_gts,
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub frames: usize,
    pub stages: Vec<StageTime>,
    pub total_seconds: f64,
    pub effective_fps: f64,
    pub recording_fps: Option<f64>,
    /// `effective_fps / recording_fps`; above 1 means faster than real time.
    pub realtime_ratio: Option<f64>,
    /// Whether stages overlapped (streaming) or ran back to back.
    pub streaming: bool,
}

/// Durations below this are clamped before computing rates.
pub const MIN_DURATION_SECS: f64 = 1e-3;

impl ThroughputReport {
    pub fn new(
        frames: usize,
        stages: Vec<(String, Duration)>,
        total: Duration,
        recording_fps: Option<f64>,
        streaming: bool,
    ) -> Self {
        Self::from_seconds(
            frames,
            stages.into_iter().map(|(s, d)| (s, d.as_secs_f64())).collect(),
            total.as_secs_f64(),
            recording_fps,
            streaming,
        )
    }

    pub fn from_seconds(
        frames: usize,
        stages: Vec<(String, f64)>,
        total_seconds: f64,
        recording_fps: Option<f64>,
        streaming: bool,
    ) -> Self {
        let effective_fps = frames as f64 / total_seconds.max(MIN_DURATION_SECS);
        let recording_fps = recording_fps.filter(|r| *r > 0.0);
        ThroughputReport {
            frames,
            stages: stages
                .into_iter()
                .map(|(stage, seconds)| StageTime { stage, seconds })
                .collect(),
            total_seconds,
            effective_fps,
            recording_fps,
            realtime_ratio: recording_fps.map(|r| effective_fps / r),
            streaming,
        }
    }

    /// Report for stage times measured back to back, total = their sum.
    pub fn from_stage_seconds(frames: usize, stages: Vec<(String, f64)>, recording_fps: Option<f64>) -> Self {
        let total = stages.iter().map(|s| s.1).sum();
        Self::from_seconds(frames, stages, total, recording_fps, false)
    }

    pub fn stage_sum(&self) -> f64 {
        self.stages.iter().map(|s| s.seconds).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, s: usize) -> MaskImage {
        let mut m = MaskImage::new(h, w);
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                m.set(y, x, true);
            }
        }
        m
    }

    #[test]
    fn iou_basics() {
        let a = square(20, 20, 2, 2, 10);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &square(20, 20, 0, 15, 3)).unwrap(), 0.0);
        let shifted = square(20, 20, 2, 7, 10);
        assert!((iou(&a, &shifted).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&MaskImage::new(3, 3), &MaskImage::new(3, 3)).unwrap(), 0.0);
        assert!(iou(&MaskImage::new(3, 3), &MaskImage::new(3, 4)).is_err());
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gts = vec![
            square(30, 30, 0, 0, 5),
            square(30, 30, 10, 10, 5),
            square(30, 30, 20, 0, 5),
        ];
        let r = match_and_score(&gts, &gts, 0.3).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = match_and_score(&[], &gts, 0.3).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(r.unmatched_gts, vec![0, 1, 2]);
    }

    #[test]
    fn one_to_one_constraint() {
        let gt = square(30, 30, 5, 5, 10);
        let p1 = square(30, 30, 5, 6, 10);
        let p2 = square(30, 30, 6, 5, 10);
        let r = match_and_score(&[p1, p2], &[gt], 0.3).unwrap();
        assert_eq!(r.true_positives(), 1);
        assert_eq!(r.unmatched_preds.len(), 1);
        assert!((r.precision - 0.5).abs() < 1e-12 && r.recall == 1.0);
    }

    #[test]
    fn recorded_stage_times_give_the_expected_ratio() {
        let r = ThroughputReport::from_stage_seconds(
            10_000,
            vec![
                ("motion".into(), 5.5),
                ("segmentation".into(), 6.9),
                ("traces".into(), 0.1),
            ],
            Some(741.0),
        );
        assert!((r.effective_fps - 800.0).abs() < 1e-9);
        assert!((r.realtime_ratio.unwrap() - 1.08).abs() < 0.01);
    }

    #[test]
    fn zero_duration_is_clamped() {
        let r = ThroughputReport::from_seconds(10, vec![], 0.0, Some(100.0), false);
        assert_eq!(r.effective_fps, 10_000.0);
        assert_eq!(r.realtime_ratio, Some(100.0));
        let r = ThroughputReport::from_seconds(10, vec![], 1.0, None, false);
        assert!(r.realtime_ratio.is_none());
    }
}

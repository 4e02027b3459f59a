//! Voltage traces as mean ROI intensity per frame.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::footprints::FootprintSet;
use crate::video_io::{MaskImage, Video};

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub footprint_id: usize,
    pub samples: Vec<f64>,
    pub frame_rate: Option<f64>,
}

/// Mean intensity over the mask's pixels for every frame.
pub fn extract_trace(video: &Video, mask: &MaskImage) -> Result<Vec<f64>> {
    if mask.height != video.height || mask.width != video.width {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs video frame {}x{}",
            mask.height, mask.width, video.height, video.width
        )));
    }
    let pixels = mask.indices();
    if pixels.is_empty() {
        return Err(Error::InvalidArgument("empty ROI mask".into()));
    }
    let n = pixels.len() as f64;
    Ok((0..video.frames)
        .map(|t| {
            let f = video.frame(t);
            pixels.iter().map(|&i| f[i] as f64).sum::<f64>() / n
        })
        .collect())
}

/// One trace per footprint, in footprint order.
pub fn extract_all(video: &Video, footprints: &FootprintSet) -> Result<Vec<Trace>> {
    footprints
        .footprints
        .par_iter()
        .map(|f| {
            Ok(Trace {
                footprint_id: f.id,
                samples: extract_trace(video, &f.mask)?,
                frame_rate: video.frame_rate,
            })
        })
        .collect()
}

/// Linear-interpolated percentile of `values` (`q` in [0, 1]).
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    if k + 1 < v.len() {
        v[k] + frac * (v[k + 1] - v[k])
    } else {
        v[k]
    }
}

/// `(x - b) / b` with `b` the trace's 10th percentile.
pub fn delta_f_over_f(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let b = percentile(samples, 0.1);
    if !(b > 0.0) {
        return Err(Error::Numeric(format!("trace baseline {b} is not positive")));
    }
    Ok(samples.iter().map(|x| (x - b) / b).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub frame_rate: Option<f64>,
    pub frames: usize,
    pub footprint_ids: Vec<usize>,
    pub delta_f_over_f: bool,
}

/// Write `frame,<id0>,<id1>,...` CSV plus a JSON sidecar (`<path>.json`
/// with the extension replaced) carrying the frame rate.
pub fn write_traces_csv(
    traces: &[Trace],
    frames: usize,
    frame_rate: Option<f64>,
    dff: bool,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let mut write = || -> std::io::Result<()> {
        write!(w, "frame")?;
        for t in traces {
            write!(w, ",{}", t.footprint_id)?;
        }
        writeln!(w)?;
        for i in 0..frames {
            write!(w, "{i}")?;
            for t in traces {
                write!(w, ",{}", t.samples[i])?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))?;

    let sidecar = TraceSidecar {
        frame_rate,
        frames,
        footprint_ids: traces.iter().map(|t| t.footprint_id).collect(),
        delta_f_over_f: dff,
    };
    let side_path = path.with_extension("json");
    std::fs::write(&side_path, serde_json::to_string_pretty(&sidecar).unwrap()).map_err(|e| Error::io(&side_path, e))
}

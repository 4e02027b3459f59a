//! `VSEGV1` raw container: 8-byte magic, little-endian `u32` T, H, W,
//! `u32` sample format (0 = f32), `f64` frame rate (0 = unknown), then the
//! samples t-major, y-major, x-minor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Video;
use crate::error::{Error, Result};

pub const RAW_MAGIC: [u8; 8] = *b"VSEGV1\0\0";
const HEADER_LEN: usize = 8 + 4 * 4 + 8;
const FORMAT_F32: u32 = 0;

pub fn write_raw_video(video: &Video, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&RAW_MAGIC);
    for v in [video.frames, video.height, video.width] {
        header.extend_from_slice(&(v as u32).to_le_bytes());
    }
    header.extend_from_slice(&FORMAT_F32.to_le_bytes());
    header.extend_from_slice(&video.frame_rate.unwrap_or(0.0).to_le_bytes());
    w.write_all(&header).map_err(|e| Error::io(path, e))?;

    let mut buf = Vec::with_capacity(1 << 16);
    for chunk in video.data.chunks(1 << 14) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_raw_video(path: &Path) -> Result<Video> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::with_capacity(1 << 20, file);
    let mut header = [0u8; HEADER_LEN];
    read_exact_at(&mut r, &mut header, 0, path)?;
    if header[..8] != RAW_MAGIC {
        return Err(Error::format(path, "bad magic at byte offset 0"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let (frames, height, width, code) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20));
    if code as u32 != FORMAT_F32 {
        return Err(Error::format(
            path,
            format!("unsupported sample format code {code} at byte offset 20"),
        ));
    }
    let frame_rate = f64::from_le_bytes(header[24..32].try_into().unwrap());
    let n = frames
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;

    let mut data = Vec::with_capacity(n);
    let mut buf = vec![0u8; 4 << 14];
    let mut offset = HEADER_LEN;
    while data.len() < n {
        let take = (n - data.len()).min(1 << 14);
        let bytes = &mut buf[..take * 4];
        read_exact_at(&mut r, bytes, offset, path)?;
        data.extend(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
        offset += take * 4;
    }
    let rate = (frame_rate > 0.0).then_some(frame_rate);
    Video::new(frames, height, width, data, rate).map_err(|e| match e {
        Error::Numeric(m) | Error::InvalidArgument(m) => Error::format(path, m),
        other => other,
    })
}

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: usize, path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, format!("truncated at byte offset {offset}"))
        } else {
            Error::io(path, e)
        }
    })
}

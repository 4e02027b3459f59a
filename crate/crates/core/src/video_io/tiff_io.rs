use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;
use tiff::ColorType;

use super::{Image, MaskImage};
use crate::error::{Error, Result};

fn tiff_err(path: &Path, page: usize, e: tiff::TiffError) -> Error {
    Error::format(path, format!("page {page}: {e}"))
}

/// Parse a frame rate out of an ImageDescription tag. Understands our own
/// `frame_rate=<fps>` line and ImageJ's `finterval=<seconds>`.
fn parse_frame_rate(desc: &str) -> Option<f64> {
    for line in desc.lines() {
        let line = line.trim();
        if let Some(v) = line.strip_prefix("frame_rate=") {
            return v.trim().parse().ok().filter(|r: &f64| *r > 0.0);
        }
        if let Some(v) = line.strip_prefix("finterval=") {
            return v.trim().parse::<f64>().ok().filter(|s| *s > 0.0).map(|s| 1.0 / s);
        }
    }
    None
}

/// True when the file is a TIFF header whose first IFD offset is zero, the
/// encoding used for an empty mask list.
fn is_empty_container(path: &Path) -> Result<bool> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 8];
    if f.read_exact(&mut head).is_err() {
        return Err(Error::format(path, "truncated TIFF header"));
    }
    let offset = match &head[..4] {
        b"II*\0" => u32::from_le_bytes(head[4..8].try_into().unwrap()),
        b"MM\0*" => u32::from_be_bytes(head[4..8].try_into().unwrap()),
        _ => return Ok(false),
    };
    Ok(offset == 0)
}

fn open_decoder(path: &Path) -> Result<Decoder<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Decoder::new(BufReader::new(f))
        .map(|d| d.with_limits(Limits::unlimited()))
        .map_err(|e| tiff_err(path, 0, e))
}

fn read_page<R: Read + Seek>(dec: &mut Decoder<R>, path: &Path, page: usize) -> Result<Image> {
    let (w, h) = dec.dimensions().map_err(|e| tiff_err(path, page, e))?;
    let color = dec.colortype().map_err(|e| tiff_err(path, page, e))?;
    if !matches!(color, ColorType::Gray(8) | ColorType::Gray(16) | ColorType::Gray(32)) {
        return Err(Error::format(
            path,
            format!("page {page}: unsupported sample format {color:?}"),
        ));
    }
    let data: Vec<f32> = match dec.read_image().map_err(|e| tiff_err(path, page, e))? {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::F32(v) => v,
        _ => {
            return Err(Error::format(
                path,
                format!("page {page}: unsupported sample format {color:?}"),
            ))
        }
    };
    Image::from_vec(h as usize, w as usize, data).map_err(|e| Error::format(path, format!("page {page}: {e}")))
}

/// Read every page of a grayscale TIFF. All pages must share dimensions.
pub fn load_image_stack(path: &Path) -> Result<(Vec<Image>, Option<f64>)> {
    if is_empty_container(path)? {
        return Ok((Vec::new(), None));
    }
    let mut dec = open_decoder(path)?;
    let frame_rate = dec
        .get_tag_ascii_string(Tag::ImageDescription)
        .ok()
        .and_then(|d| parse_frame_rate(&d));
    let mut pages = Vec::new();
    loop {
        let page = pages.len();
        let img = read_page(&mut dec, path, page)?;
        if let Some(first) = pages.first() {
            let first: &Image = first;
            if !img.same_dims(first) {
                return Err(Error::format(
                    path,
                    format!(
                        "page {page}: dimensions {}x{} differ from page 0 ({}x{})",
                        img.height, img.width, first.height, first.width
                    ),
                ));
            }
        }
        pages.push(img);
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| tiff_err(path, page + 1, e))?;
    }
    Ok((pages, frame_rate))
}

/// Write `f32` pages. A frame rate, when given, goes into the first page's
/// ImageDescription.
pub fn save_image_stack(pages: &[Image], frame_rate: Option<f64>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if pages.is_empty() {
        write_empty_container(&mut w, path)?;
        return w.flush().map_err(|e| Error::io(path, e));
    }
    let mut enc = TiffEncoder::new(&mut w).map_err(|e| tiff_err(path, 0, e))?;
    for (i, page) in pages.iter().enumerate() {
        let mut img = enc
            .new_image::<colortype::Gray32Float>(page.width as u32, page.height as u32)
            .map_err(|e| tiff_err(path, i, e))?;
        if i == 0 {
            if let Some(rate) = frame_rate {
                img.encoder()
                    .write_tag(Tag::ImageDescription, format!("frame_rate={rate}").as_str())
                    .map_err(|e| tiff_err(path, i, e))?;
            }
        }
        img.write_data(&page.data).map_err(|e| tiff_err(path, i, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_empty_container(w: &mut impl Write, path: &Path) -> Result<()> {
    w.write_all(b"II*\0\0\0\0\0").map_err(|e| Error::io(path, e))
}

pub(super) fn save_mask_stack(masks: &[MaskImage], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if masks.is_empty() {
        write_empty_container(&mut w, path)?;
        return w.flush().map_err(|e| Error::io(path, e));
    }
    let mut enc = TiffEncoder::new(&mut w).map_err(|e| tiff_err(path, 0, e))?;
    for (i, m) in masks.iter().enumerate() {
        let bytes: Vec<u8> = m.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        enc.write_image::<colortype::Gray8>(m.width as u32, m.height as u32, &bytes)
            .map_err(|e| tiff_err(path, i, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(super) fn load_mask_stack(path: &Path) -> Result<Vec<MaskImage>> {
    let (pages, _) = load_image_stack(path)?;
    Ok(pages
        .into_iter()
        .map(|p| MaskImage {
            height: p.height,
            width: p.width,
            bits: p.data.iter().map(|&v| v > 0.0).collect(),
        })
        .collect())
}

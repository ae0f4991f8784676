//! `.vibmap` files and PNG previews.
//!
//! Layout: the 5-byte magic `VMAP1`, a `u32` little-endian header length,
//! a JSON header, then `width · height` little-endian `f32` values in
//! row-major order, then one touched-mask byte (0 or 1) per pixel.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use taxelmap_core::vibmap::{preview_u8, RawStats, VibrationMap, TAXEL_PITCH_MM};
use taxelmap_core::Grid;
use thiserror::Error;

pub const MAGIC: &[u8; 5] = b"VMAP1";

#[derive(Debug, Error)]
pub enum MapFileError {
    #[error("malformed map file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

fn malformed(msg: impl Into<String>) -> MapFileError {
    MapFileError::Malformed(msg.into())
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    width_px: usize,
    height_px: usize,
    pitch_mm: f64,
    normalized: bool,
    raw_min: Option<f64>,
    raw_max: Option<f64>,
    raw_mean: Option<f64>,
    raw_std: Option<f64>,
}

pub fn encode_map(map: &VibrationMap) -> Vec<u8> {
    let raw = map.raw_stats();
    let header = Header {
        width_px: map.width(),
        height_px: map.height(),
        pitch_mm: TAXEL_PITCH_MM,
        normalized: map.is_normalized(),
        raw_min: raw.map(|r| r.min),
        raw_max: raw.map(|r| r.max),
        raw_mean: raw.map(|r| r.mean),
        raw_std: raw.map(|r| r.std),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let n = map.width() * map.height();
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + n * 5);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in map.values().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(map.touched().iter().map(|&t| t as u8));
    out
}

pub fn decode_map(bytes: &[u8]) -> Result<VibrationMap, MapFileError> {
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| malformed("bad magic"))?;
    if rest.len() < 4 {
        return Err(malformed("missing header length"));
    }
    let (len, rest) = rest.split_at(4);
    let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
    if rest.len() < len {
        return Err(malformed("truncated header"));
    }
    let (json, data) = rest.split_at(len);
    let h: Header = serde_json::from_slice(json).map_err(|e| malformed(format!("header: {e}")))?;
    let n = h
        .width_px
        .checked_mul(h.height_px)
        .filter(|&n| n > 0)
        .ok_or_else(|| malformed("bad dimensions"))?;
    let expected = n.checked_mul(5).ok_or_else(|| malformed("bad dimensions"))?;
    if data.len() != expected {
        return Err(malformed(format!("data section is {} bytes, expected {expected}", data.len())));
    }
    let (grid, mask) = data.split_at(n * 4);
    let values: Vec<f32> = grid
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(malformed("non-finite value"));
    }
    let touched = mask
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(malformed("mask byte is not 0 or 1")),
        })
        .collect::<Result<Vec<bool>, _>>()?;
    let raw = match (h.raw_min, h.raw_max, h.raw_mean, h.raw_std) {
        (Some(min), Some(max), Some(mean), Some(std)) => Some(RawStats { min, max, mean, std }),
        (None, None, None, None) => None,
        _ => return Err(malformed("incomplete statistics")),
    };
    let grid = Grid::from_vec(h.width_px, h.height_px, values).expect("size checked");
    VibrationMap::from_parts(grid, touched, h.normalized, raw).map_err(|e| malformed(e.to_string()))
}

pub fn write_map(map: &VibrationMap, path: impl AsRef<Path>) -> Result<(), MapFileError> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode_map(map))?;
    f.flush()?;
    Ok(())
}

pub fn read_map(path: impl AsRef<Path>) -> Result<VibrationMap, MapFileError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_map(&bytes)
}

/// Writes an 8-bit grayscale preview (`value · 255`, half-up).
pub fn write_preview_png(map: &VibrationMap, path: impl AsRef<Path>) -> Result<(), MapFileError> {
    write_gray_png(&preview_u8(map), path)
}

pub fn write_gray_png(img: &Grid<u8>, path: impl AsRef<Path>) -> Result<(), MapFileError> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(img.data())?;
    writer.finish()?;
    Ok(())
}

/// Reads back an 8-bit grayscale PNG.
pub fn read_gray_png(path: impl AsRef<Path>) -> Result<Grid<u8>, MapFileError> {
    let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| malformed(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| malformed("png too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| malformed(format!("png: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(malformed("expected 8-bit grayscale png"));
    }
    buf.truncate(info.buffer_size());
    Grid::from_vec(info.width as usize, info.height as usize, buf).ok_or_else(|| malformed("png size"))
}

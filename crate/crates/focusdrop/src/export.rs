//! Mask and heatmap files: binary PGM images plus CSV companions.

use std::fs;
use std::io::Write;
use std::path::Path;

use focusdrop_core::analysis::{keeping_ratio, CamMap};
use focusdrop_core::focus::FocusMask;
use focusdrop_core::Scalar;
use serde::Serialize;

use crate::error::{format_err, io_err, Result};
use crate::metrics::CsvLog;

pub const MASK_META_SCHEMA: &str = "# schema: focusdrop-mask-meta v1";

/// Binary PGM (`P5`) with the given maxval; one byte per pixel.
pub fn pgm_bytes(width: usize, height: usize, maxval: u8, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Mask as a PGM with maxval 1 (retained = 1).
pub fn write_mask_pgm<T: Scalar>(path: &Path, mask: &FocusMask<T>) -> Result<()> {
    let px: Vec<u8> = mask.bits.iter().map(|&b| b as u8).collect();
    fs::write(path, pgm_bytes(mask.width, mask.height, 1, &px)).map_err(io_err(path))
}

pub fn write_mask_csv<T: Scalar>(path: &Path, mask: &FocusMask<T>) -> Result<()> {
    let mut s = String::new();
    for row in mask.bits.chunks(mask.width) {
        let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    fs::write(path, s).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct MaskMetaRow {
    pub sample: usize,
    pub ref_channel: usize,
    pub gamma: f64,
    pub threshold: f64,
    pub peak_row: usize,
    pub peak_col: usize,
    pub peak_value: f64,
    pub dropped_fraction: f64,
    pub retained_fraction: f64,
}

impl MaskMetaRow {
    pub fn new<T: Scalar>(sample: usize, mask: &FocusMask<T>) -> Self {
        let (dropped_fraction, retained_fraction) = keeping_ratio(mask);
        Self {
            sample,
            ref_channel: mask.ref_channel,
            gamma: mask.gamma.as_f64(),
            threshold: mask.threshold.as_f64(),
            peak_row: mask.peak_pos.0,
            peak_col: mask.peak_pos.1,
            peak_value: mask.peak_value.as_f64(),
            dropped_fraction,
            retained_fraction,
        }
    }
}

/// One metadata row per mask.
pub fn write_mask_meta<T: Scalar>(path: &Path, masks: &[FocusMask<T>]) -> Result<()> {
    let mut log = CsvLog::create(path, MASK_META_SCHEMA)?;
    for (i, m) in masks.iter().enumerate() {
        log.write(&MaskMetaRow::new(i, m))?;
    }
    Ok(())
}

/// 8-bit PGM of the normalized map (round-half-even) and a CSV of the
/// normalized values, one image row per line.
pub fn export_heatmap(map: &CamMap, pgm: &Path, csv: &Path) -> Result<()> {
    fs::write(pgm, pgm_bytes(map.width, map.height, 255, &map.to_gray8())).map_err(io_err(pgm))?;
    let mut file = fs::File::create(csv).map_err(io_err(csv))?;
    let mut s = String::new();
    for row in map.values.chunks(map.width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    file.write_all(s.as_bytes()).map_err(io_err(csv))
}

/// Values and `(height, width)` from a heatmap CSV.
pub fn read_heatmap_csv(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (n, line) in text.lines().enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(path, format!("line {}: {e}", n + 1)))?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(format_err(path, format!("line {} has {} values", n + 1, row.len())));
        }
        values.extend(row);
        height += 1;
    }
    Ok((values, height, width.unwrap_or(0)))
}

/// Parse a binary PGM; returns `(width, height, maxval, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, u8, Vec<u8>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format_err(path, "not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad header field `{s}`")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    let px = bytes.get(pos + 1..).unwrap_or_default().to_vec();
    if px.len() != w * h || max > 255 {
        return Err(format_err(path, "PGM payload does not match header"));
    }
    Ok((w, h, max as u8, px))
}

/// Read a PNG/PNM image as a normalized `(1, 3, size, size)` tensor,
/// resizing with a triangle filter when needed.
pub fn load_image_tensor(
    path: &Path,
    size: usize,
    normalization: &focusdrop_core::data::Normalization,
) -> Result<focusdrop_core::Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| crate::Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let img = if img.width() as usize != size || img.height() as usize != size {
        image::imageops::resize(&img, size as u32, size as u32, image::imageops::FilterType::Triangle)
    } else {
        img
    };
    let plane = size * size;
    let mut data = vec![0f32; 3 * plane];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            let v = px[c] as f64 / 255.0;
            data[c * plane + y as usize * size + x as usize] =
                ((v - normalization.mean[c]) / normalization.std[c]) as f32;
        }
    }
    Ok(focusdrop_core::Tensor::new(&[1, 3, size, size], data)?)
}

//! Image file handling: PNG and binary PPM/PGM in, fp32 buffers out.
//!
//! 8-bit samples map to fp32 as v/255 on read and round(v*255) clamped on
//! write. Output files are written atomically (temp file + rename).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

/// Interleaved H×W×3 fp32 image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Rgb32Image {
    pub height: usize,
    pub width: usize,
    /// Row-major, interleaved r,g,b per pixel; length = height*width*3.
    pub data: Vec<f32>,
}

impl Rgb32Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::invalid_argument(format!(
                "rgb image dims {height}x{width} do not match data length {}",
                data.len()
            )));
        }
        Ok(Rgb32Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Rgb32Image { height, width, data }
    }

    pub fn pixel(&self, r: usize, c: usize) -> [f32; 3] {
        let i = (r * self.width + c) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }
}

/// Round-half-up 8-bit quantization of a [0, 1] sample.
pub fn encode8(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Decodes a PNG/PPM/PGM file to fp32 RGB. Grayscale sources are replicated
/// across the three channels.
pub fn read_image(path: &Path) -> Result<Rgb32Image> {
    let img = image::open(path)?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data: Vec<f32> = rgb.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Rgb32Image::new(h, w, data)
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = dir.join(format!(".{stem}.tmp-{}", std::process::id()));
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn encode_by_extension(
    path: &Path,
    raw: &[u8],
    width: u32,
    height: u32,
    color: ExtendedColorType,
) -> Result<Vec<u8>> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    let mut out = Vec::new();
    match ext.as_str() {
        "png" => {
            image::codecs::png::PngEncoder::new(&mut out).write_image(raw, width, height, color)?;
        }
        "ppm" | "pgm" | "pnm" => {
            let subtype = match color {
                ExtendedColorType::L8 => PnmSubtype::Graymap(SampleEncoding::Binary),
                _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
            };
            PnmEncoder::new(&mut out)
                .with_subtype(subtype)
                .write_image(raw, width, height, color)?;
        }
        other => {
            return Err(Error::invalid_argument(format!(
                "unsupported output format '.{other}' (supported: png, ppm, pgm)"
            )))
        }
    }
    Ok(out)
}

/// Writes an fp32 RGB image as 8-bit PNG or binary PPM, atomically.
pub fn write_rgb(path: &Path, img: &Rgb32Image) -> Result<()> {
    let raw: Vec<u8> = img.data.iter().map(|&v| encode8(v)).collect();
    let bytes = encode_by_extension(
        path,
        &raw,
        img.width as u32,
        img.height as u32,
        ExtendedColorType::Rgb8,
    )?;
    atomic_write(path, &bytes)
}

/// Writes a single-channel fp32 map as 8-bit grayscale PNG or binary PGM,
/// scaling by 255 with round-half-up.
pub fn write_gray(path: &Path, height: usize, width: usize, data: &[f32]) -> Result<()> {
    if data.len() != height * width {
        return Err(Error::invalid_argument(format!(
            "gray map dims {height}x{width} do not match data length {}",
            data.len()
        )));
    }
    let raw: Vec<u8> = data.iter().map(|&v| encode8(v)).collect();
    let bytes = encode_by_extension(path, &raw, width as u32, height as u32, ExtendedColorType::L8)?;
    atomic_write(path, &bytes)
}

/// Area-average resize over the rectangular partition of the source into a
/// `target_h x target_w` grid. Cell boundaries are floor(i*H/target), so for
/// non-divisible sizes the cells differ by at most one source row/column.
/// When the target exceeds the source along an axis, empty cells fall back to
/// the nearest source row/column.
pub fn resize_area(img: &Rgb32Image, target_h: usize, target_w: usize) -> Result<Rgb32Image> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid_argument("resize target must be positive".to_string()));
    }
    let (h, w) = (img.height, img.width);
    let mut out = vec![0.0f32; target_h * target_w * 3];
    for ty in 0..target_h {
        let (r0, r1) = cell_bounds(ty, target_h, h);
        for tx in 0..target_w {
            let (c0, c1) = cell_bounds(tx, target_w, w);
            let mut acc = [0.0f64; 3];
            for r in r0..r1 {
                for c in c0..c1 {
                    let p = (r * w + c) * 3;
                    acc[0] += img.data[p] as f64;
                    acc[1] += img.data[p + 1] as f64;
                    acc[2] += img.data[p + 2] as f64;
                }
            }
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            let o = (ty * target_w + tx) * 3;
            out[o] = (acc[0] / n) as f32;
            out[o + 1] = (acc[1] / n) as f32;
            out[o + 2] = (acc[2] / n) as f32;
        }
    }
    Rgb32Image::new(target_h, target_w, out)
}

/// Half-open source range covered by target cell `i` of `n` along an axis of
/// length `len`; never empty.
pub fn cell_bounds(i: usize, n: usize, len: usize) -> (usize, usize) {
    let lo = i * len / n;
    let hi = ((i + 1) * len / n).max(lo + 1).min(len);
    (lo.min(len - 1), hi)
}

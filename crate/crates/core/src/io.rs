//! Grayscale raster I/O: PNG (8/16-bit) via the `image` crate, PGM (P5) with a
//! hand-rolled codec so 16-bit big-endian payloads round-trip exactly.
//!
//! Format is chosen by file extension: `.png` or `.pgm` (case-insensitive).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A decoded single-channel raster at its native bit depth.
#[derive(Debug, Clone)]
pub enum RawRaster {
    Gray8 {
        width: usize,
        height: usize,
        data: Vec<u8>,
    },
    Gray16 {
        width: usize,
        height: usize,
        data: Vec<u16>,
    },
}

impl RawRaster {
    pub fn dimensions(&self) -> (usize, usize) {
        match self {
            RawRaster::Gray8 { width, height, .. } | RawRaster::Gray16 { width, height, .. } => {
                (*width, *height)
            }
        }
    }
}

pub(crate) fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Full-precision decimal rendering (17 significant digits): parses back to
/// the identical f64, which keeps text outputs byte-stable across runs.
pub fn full_precision(value: f64) -> String {
    format!("{value:.16e}")
}

/// Read a single-channel PNG or PGM at its native depth.
pub fn read_gray(path: &Path) -> Result<RawRaster> {
    if has_extension(path, "pgm") {
        return read_pgm(path);
    }
    if !has_extension(path, "png") {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            message: "expected a .png or .pgm file".into(),
        });
    }
    let dynamic = image::open(path).map_err(|e| Error::decode(path, e.to_string()))?;
    match dynamic {
        image::DynamicImage::ImageLuma8(img) => Ok(RawRaster::Gray8 {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.into_raw(),
        }),
        image::DynamicImage::ImageLuma16(img) => Ok(RawRaster::Gray16 {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.into_raw(),
        }),
        other => Err(Error::UnsupportedFormat {
            path: path.into(),
            message: format!("need 8- or 16-bit single-channel input, got {other:?}"),
        }),
    }
}

pub fn write_gray8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    debug_assert_eq!(data.len(), width * height);
    if has_extension(path, "pgm") {
        return write_pgm_bytes(path, width, height, 255, data);
    }
    let img = image::GrayImage::from_raw(width as u32, height as u32, data.to_vec())
        .expect("buffer length checked above");
    img.save(path)
        .map_err(|e| Error::decode(path, e.to_string()))
}

pub fn write_gray16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    debug_assert_eq!(data.len(), width * height);
    if has_extension(path, "pgm") {
        let mut bytes = Vec::with_capacity(data.len() * 2);
        for &v in data {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        return write_pgm_bytes(path, width, height, 65535, &bytes);
    }
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        width as u32,
        height as u32,
        data.to_vec(),
    )
    .expect("buffer length checked above");
    img.save(path)
        .map_err(|e| Error::decode(path, e.to_string()))
}

// ── PGM (P5) ───────────────────────────────────────────────────────────────

fn read_pgm(path: &Path) -> Result<RawRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;

    let magic = take_token(&bytes, &mut pos)
        .ok_or_else(|| Error::decode(path, "missing PGM magic number"))?;
    if magic != b"P5" {
        return Err(Error::decode(path, "not a binary PGM (expected P5)"));
    }
    let mut field = |name: &str| -> Result<usize> {
        take_token(&bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::decode(path, format!("bad PGM {name}")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::decode(path, "bad PGM header values"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;

    let n = width * height;
    if maxval < 256 {
        let data = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::decode(path, "truncated PGM payload"))?
            .to_vec();
        Ok(RawRaster::Gray8 {
            width,
            height,
            data,
        })
    } else {
        let raw = bytes
            .get(pos..pos + 2 * n)
            .ok_or_else(|| Error::decode(path, "truncated PGM payload"))?;
        let data = raw
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        Ok(RawRaster::Gray16 {
            width,
            height,
            data,
        })
    }
}

/// Next whitespace-delimited token, skipping `#` comments.
fn take_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

fn write_pgm_bytes(
    path: &Path,
    width: usize,
    height: usize,
    maxval: usize,
    payload: &[u8],
) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(f, "P5\n{width} {height}\n{maxval}\n").map_err(|e| Error::io(path, e))?;
    f.write_all(payload).map_err(|e| Error::io(path, e))
}

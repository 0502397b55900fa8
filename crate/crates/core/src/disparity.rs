//! Dense disparity images and their v-disparity projection.
//!
//! On disk a disparity map is an 8- or 16-bit single-channel PNG or PGM whose
//! raw intensities scale linearly to disparity units; raw 0 means "no data".
//! In memory invalid pixels carry a NaN sentinel, so validity is simply
//! finiteness. Raw disparities are strictly positive by construction; a
//! *transformed* image (see [`crate::transform`]) may legitimately contain 0,
//! which is why validity is not defined as positivity here.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, RawRaster};

/// Default raw-to-disparity scale: 16-bit fixed point with 8 fractional bits.
pub const DEFAULT_SCALE: f64 = 1.0 / 256.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DisparityImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DisparityImage {
    /// Build from row-major values. Non-finite entries become the invalid
    /// sentinel. Needs at least a 2x2 frame.
    pub fn new(width: usize, height: usize, mut values: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::BadDimensions { width, height });
        }
        if values.len() != width * height {
            return Err(Error::LengthMismatch {
                width,
                height,
                expected: width * height,
                got: values.len(),
            });
        }
        for v in &mut values {
            if !v.is_finite() {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major values; invalid pixels are NaN.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.get(u, v).is_finite()
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_finite()).count()
    }

    /// Valid pixels as (u, v, value), row-major.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values.iter().enumerate().filter_map(move |(i, &g)| {
            g.is_finite()
                .then(|| (i % self.width, i / self.width, g))
        })
    }
}

/// Read a disparity image; `raw * scale` gives disparity, raw 0 is invalid.
pub fn load_disparity(path: &Path, scale: f64) -> Result<DisparityImage> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::BadScale(scale));
    }
    let raster = io::read_gray(path)?;
    let (width, height) = raster.dimensions();
    let values = match raster {
        RawRaster::Gray8 { data, .. } => data
            .iter()
            .map(|&r| if r == 0 { f64::NAN } else { r as f64 * scale })
            .collect(),
        RawRaster::Gray16 { data, .. } => data
            .iter()
            .map(|&r| if r == 0 { f64::NAN } else { r as f64 * scale })
            .collect(),
    };
    DisparityImage::new(width, height, values)
}

/// Write as 16-bit (PNG or PGM by extension): `raw = round(value / scale)`,
/// invalid pixels become raw 0, raws saturate at 65535.
///
/// Raw 0 is *reserved* for invalid pixels: a valid value that would round to
/// 0 is written as raw 1 instead, so validity survives the round trip. (A
/// flattened road image bottoms out at exactly 0, and silently turning its
/// lowest — most pothole-like — pixels invalid would be the worst possible
/// place to lose data.) Everything from `scale/2` up still round-trips to
/// within `scale/2`.
pub fn save_disparity(path: &Path, img: &DisparityImage, scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::BadScale(scale));
    }
    let data: Vec<u16> = img
        .values
        .iter()
        .map(|&g| {
            if g.is_finite() {
                (g / scale).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    io::write_gray16(path, img.width, img.height, &data)
}

// ── v-disparity ────────────────────────────────────────────────────────────

/// Per-row histogram of disparity values: `counts[v][bin]` is how many valid
/// pixels of image row `v` fall in `[bin*bin_width, (bin+1)*bin_width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VDisparityHistogram {
    rows: usize,
    cols: usize,
    bin_width: f64,
    counts: Vec<u64>,
}

impl VDisparityHistogram {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    #[inline]
    pub fn count(&self, v: usize, bin: usize) -> u64 {
        self.counts[v * self.cols + bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// 8-bit PGM rendering, counts scaled so the maximum maps to 255.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let data: Vec<u8> = self
            .counts
            .iter()
            .map(|&c| ((c * 255) / max) as u8)
            .collect();
        io::write_gray8(path, self.cols, self.rows, &data)
    }

    /// CSV rows `v,g_bin,count`, nonzero cells only, row-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("v,g_bin,count\n");
        for v in 0..self.rows {
            for bin in 0..self.cols {
                let c = self.count(v, bin);
                if c > 0 {
                    out.push_str(&format!("{v},{bin},{c}\n"));
                }
            }
        }
        out
    }
}

/// Project an image into the v-disparity domain. The number of disparity bins
/// is derived from the largest valid value, so every valid non-negative pixel
/// is counted; negative values (possible only in hand-built images) are out of
/// range and dropped.
pub fn v_disparity(img: &DisparityImage, bin_width: f64) -> Result<VDisparityHistogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::BadBinWidth(bin_width));
    }
    let bin_of = |g: f64| (g / bin_width).floor();
    let mut max_bin = 0usize;
    let mut any = false;
    for (_, _, g) in img.valid_pixels() {
        let b = bin_of(g);
        if b >= 0.0 {
            any = true;
            max_bin = max_bin.max(b as usize);
        }
    }
    let cols = if any { max_bin + 1 } else { 1 };
    let rows = img.height();
    let mut counts = vec![0u64; rows * cols];
    for (_, v, g) in img.valid_pixels() {
        let b = bin_of(g);
        if b >= 0.0 && (b as usize) < cols {
            counts[v * cols + b as usize] += 1;
        }
    }
    Ok(VDisparityHistogram {
        rows,
        cols,
        bin_width,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checkerboard(width: usize, height: usize) -> DisparityImage {
        let values = (0..width * height)
            .map(|i| if i % 3 == 0 { f64::NAN } else { 1.0 + i as f64 })
            .collect();
        DisparityImage::new(width, height, values).unwrap()
    }

    #[test]
    fn constructor_rejects_degenerate_shapes() {
        assert!(DisparityImage::new(1, 5, vec![1.0; 5]).is_err());
        assert!(DisparityImage::new(3, 3, vec![1.0; 8]).is_err());
    }

    #[test]
    fn non_finite_inputs_become_invalid() {
        let img =
            DisparityImage::new(2, 2, vec![1.0, f64::INFINITY, f64::NEG_INFINITY, f64::NAN])
                .unwrap();
        assert_eq!(img.valid_count(), 1);
        assert!(img.is_valid(0, 0));
        assert!(!img.is_valid(1, 0));
    }

    #[test]
    fn load_applies_scale_and_invalidates_zero() {
        // Raw [256, 512, 0, 1024] at 1/256 → [1, 2, invalid, 4].
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        io::write_gray16(&path, 2, 2, &[256, 512, 0, 1024]).unwrap();
        let img = load_disparity(&path, DEFAULT_SCALE).unwrap();
        assert_eq!(img.get(0, 0), 1.0);
        assert_eq!(img.get(1, 0), 2.0);
        assert!(!img.is_valid(0, 1));
        assert_eq!(img.get(1, 1), 4.0);
    }

    #[test]
    fn load_handles_8_bit_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d8.png");
        io::write_gray8(&path, 2, 2, &[0, 1, 128, 255]).unwrap();
        let img = load_disparity(&path, 1.0).unwrap();
        assert!(!img.is_valid(0, 0));
        assert_eq!(img.get(1, 0), 1.0);
        assert_eq!(img.get(1, 1), 255.0);
    }

    #[test]
    fn save_marks_invalid_as_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let img = DisparityImage::new(2, 2, vec![1.0, f64::NAN, 2.0, 3.0]).unwrap();
        save_disparity(&path, &img, DEFAULT_SCALE).unwrap();
        let back = load_disparity(&path, DEFAULT_SCALE).unwrap();
        assert!(!back.is_valid(1, 0));
        assert_eq!(back.valid_count(), 3);
    }

    #[test]
    fn save_keeps_near_zero_valid_pixels_valid() {
        // A flattened image bottoms out at exactly 0; raw 0 is the invalid
        // sentinel, so such pixels must land on raw 1, not vanish.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.png");
        let img = DisparityImage::new(2, 2, vec![0.0, DEFAULT_SCALE * 0.4, 1.0, f64::NAN]).unwrap();
        save_disparity(&path, &img, DEFAULT_SCALE).unwrap();
        let back = load_disparity(&path, DEFAULT_SCALE).unwrap();
        assert_eq!(back.valid_count(), 3);
        assert_eq!(back.get(0, 0), DEFAULT_SCALE);
        assert_eq!(back.get(1, 0), DEFAULT_SCALE);
        assert_eq!(back.get(0, 1), 1.0);
    }

    #[test]
    fn vdisp_counts_single_row_example() {
        // Row of [3.2, 3.7, 4.1] at bin width 1 → bin 3 twice, bin 4 once.
        let img = DisparityImage::new(
            3,
            2,
            vec![3.2, 3.7, 4.1, f64::NAN, f64::NAN, f64::NAN],
        )
        .unwrap();
        let h = v_disparity(&img, 1.0).unwrap();
        assert_eq!(h.count(0, 3), 2);
        assert_eq!(h.count(0, 4), 1);
        assert_eq!(h.total(), 3);
    }

    #[test]
    fn vdisp_all_invalid_is_all_zero() {
        let img = DisparityImage::new(2, 2, vec![f64::NAN; 4]).unwrap();
        let h = v_disparity(&img, 1.0).unwrap();
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn vdisp_rejects_bad_bin_width() {
        let img = checkerboard(4, 4);
        assert!(v_disparity(&img, 0.0).is_err());
        assert!(v_disparity(&img, -1.0).is_err());
    }

    #[test]
    fn vdisp_csv_lists_nonzero_cells() {
        let img = DisparityImage::new(
            3,
            2,
            vec![3.2, 3.7, 4.1, f64::NAN, f64::NAN, f64::NAN],
        )
        .unwrap();
        let csv = v_disparity(&img, 1.0).unwrap().to_csv();
        assert_eq!(csv, "v,g_bin,count\n0,3,2\n0,4,1\n");
    }

    proptest! {
        // Conservation: every valid pixel lands in exactly one bin.
        #[test]
        fn vdisp_conserves_valid_pixels(
            w in 2usize..12,
            h in 2usize..12,
            seed in 0u64..500,
            bin_width in 0.25f64..4.0,
        ) {
            let mut rng = crate::rng::seeded(seed);
            let values: Vec<f64> = (0..w * h)
                .map(|_| {
                    if crate::rng::uniform(&mut rng) < 0.2 {
                        f64::NAN
                    } else {
                        crate::rng::uniform_in(&mut rng, 0.01, 80.0)
                    }
                })
                .collect();
            let img = DisparityImage::new(w, h, values).unwrap();
            let hist = v_disparity(&img, bin_width).unwrap();
            prop_assert_eq!(hist.total(), img.valid_count() as u64);
        }

        // Round trip through disk reproduces values to half a raw step.
        #[test]
        fn save_load_round_trip(
            w in 2usize..10,
            h in 2usize..10,
            seed in 0u64..500,
        ) {
            let scale = DEFAULT_SCALE;
            let mut rng = crate::rng::seeded(seed);
            let values: Vec<f64> = (0..w * h)
                .map(|_| {
                    if crate::rng::uniform(&mut rng) < 0.15 {
                        f64::NAN
                    } else {
                        // Keep at least one raw step above zero so validity survives.
                        crate::rng::uniform_in(&mut rng, scale, 250.0)
                    }
                })
                .collect();
            let img = DisparityImage::new(w, h, values).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.png");
            save_disparity(&path, &img, scale).unwrap();
            let back = load_disparity(&path, scale).unwrap();
            for (a, b) in img.values().iter().zip(back.values()) {
                match (a.is_finite(), b.is_finite()) {
                    (true, true) => prop_assert!((a - b).abs() <= scale / 2.0 + 1e-12),
                    (false, false) => {}
                    _ => prop_assert!(false, "validity flipped: {a} vs {b}"),
                }
            }
        }
    }
}

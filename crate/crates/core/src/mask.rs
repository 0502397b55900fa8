//! Binary pothole masks and the ellipse primitive shared by the synthetic
//! generators. On disk a mask is an 8-bit PNG/PGM with 0 = background and
//! 255 = pothole; any nonzero intensity reads back as pothole.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, RawRaster};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl LabelMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![false; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::LengthMismatch {
                width,
                height,
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.pixels[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.pixels[v * self.width + u] = on;
    }

    /// Number of pothole pixels.
    pub fn area(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let data: Vec<u8> = self.pixels.iter().map(|&p| if p { 255 } else { 0 }).collect();
        io::write_gray8(path, self.width, self.height, &data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        match io::read_gray(path)? {
            RawRaster::Gray8 {
                width,
                height,
                data,
            } => Ok(Self {
                width,
                height,
                pixels: data.iter().map(|&b| b != 0).collect(),
            }),
            RawRaster::Gray16 { .. } => Err(Error::UnsupportedFormat {
                path: path.into(),
                message: "masks are 8-bit".into(),
            }),
        }
    }
}

/// A rotated ellipse in pixel coordinates: the set of points whose normalized
/// elliptical radius is at most 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center_u: f64,
    pub center_v: f64,
    /// Semi-axis along the rotated x direction.
    pub semi_a: f64,
    /// Semi-axis along the rotated y direction.
    pub semi_b: f64,
    /// Rotation in radians.
    pub rotation: f64,
}

impl Ellipse {
    /// Squared normalized radius of the point (u, v): inside ⇔ value ≤ 1.
    #[inline]
    pub fn radius_sq(&self, u: f64, v: f64) -> f64 {
        let (sin, cos) = self.rotation.sin_cos();
        let du = u - self.center_u;
        let dv = v - self.center_v;
        let x = du * cos + dv * sin;
        let y = -du * sin + dv * cos;
        (x / self.semi_a).powi(2) + (y / self.semi_b).powi(2)
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        self.radius_sq(u, v) <= 1.0
    }

    /// Conservative bounding box clipped to a width × height frame.
    pub fn clipped_bbox(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let r = self.semi_a.max(self.semi_b);
        let lo_u = (self.center_u - r).floor().max(0.0) as usize;
        let lo_v = (self.center_v - r).floor().max(0.0) as usize;
        let hi_u = ((self.center_u + r).ceil() as usize).min(width.saturating_sub(1));
        let hi_v = ((self.center_v + r).ceil() as usize).min(height.saturating_sub(1));
        (lo_u, lo_v, hi_u, hi_v)
    }

    /// Paint the ellipse into a mask (integer pixel coordinates, clipped).
    pub fn rasterize_into(&self, mask: &mut LabelMask) {
        let (lo_u, lo_v, hi_u, hi_v) = self.clipped_bbox(mask.width(), mask.height());
        for v in lo_v..=hi_v {
            for u in lo_u..=hi_u {
                if self.contains(u as f64, v as f64) {
                    mask.set(u, v, true);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut m = LabelMask::empty(5, 4);
        m.set(0, 0, true);
        m.set(4, 3, true);
        m.set(2, 1, true);
        m.save(&path).unwrap();
        assert_eq!(LabelMask::load(&path).unwrap(), m);
    }

    #[test]
    fn circle_rasterization_matches_full_frame_scan() {
        let e = Ellipse {
            center_u: 10.0,
            center_v: 8.0,
            semi_a: 5.0,
            semi_b: 3.0,
            rotation: 0.7,
        };
        let mut fast = LabelMask::empty(24, 20);
        e.rasterize_into(&mut fast);
        // Oracle: test every pixel of the frame, no bbox shortcut.
        for v in 0..20 {
            for u in 0..24 {
                assert_eq!(fast.get(u, v), e.contains(u as f64, v as f64), "at ({u},{v})");
            }
        }
    }

    #[test]
    fn rasterization_clips_to_frame() {
        let e = Ellipse {
            center_u: 0.0,
            center_v: 0.0,
            semi_a: 10.0,
            semi_b: 10.0,
            rotation: 0.0,
        };
        let mut m = LabelMask::empty(6, 6);
        e.rasterize_into(&mut m); // must not panic, quarter disc lands inside
        assert!(m.area() > 0);
        assert!(m.get(0, 0));
    }

    #[test]
    fn axis_aligned_circle_area_is_exact() {
        // r = 10.5 keeps integer points off the boundary, so float rounding
        // cannot flip a pixel. Integer-arithmetic oracle: u² + v² ≤ 110.
        let e = Ellipse {
            center_u: 16.0,
            center_v: 16.0,
            semi_a: 10.5,
            semi_b: 10.5,
            rotation: 0.0,
        };
        let mut m = LabelMask::empty(33, 33);
        e.rasterize_into(&mut m);
        let oracle = {
            let mut n = 0usize;
            for v in -16i64..=16 {
                for u in -16i64..=16 {
                    if u * u + v * v <= 110 {
                        n += 1;
                    }
                }
            }
            n
        };
        assert_eq!(m.area(), oracle);
        assert_eq!(oracle, 349);
    }
}

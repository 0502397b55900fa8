//! Dense NCHW tensors and their on-disk format.
//!
//! The `.t4` format is a one-line ASCII header `N C H W` followed by the
//! values as little-endian f32 in row-major (N, C, H, W) order. f32 on disk
//! keeps files half the size; in memory everything is f64.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A dense rank-4 tensor in (batch, channel, height, width) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Self::check_shape(n, c, h, w)?;
        Ok(Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        })
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Self::check_shape(n, c, h, w)?;
        if data.len() != n * c * h * w {
            return Err(Error::TensorShape(format!(
                "{} values for shape ({n}, {c}, {h}, {w})",
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    fn check_shape(n: usize, c: usize, h: usize, w: usize) -> Result<()> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::TensorShape(format!(
                "zero-sized shape ({n}, {c}, {h}, {w})"
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && y < self.h && x < self.w);
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One (n, c) plane as a contiguous H×W slice.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = self.index(n, c, 0, 0);
        &self.data[start..start + self.h * self.w]
    }

    pub fn same_shape(&self, other: &Tensor4) -> bool {
        self.shape() == other.shape()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(32 + 4 * self.data.len());
        bytes.extend_from_slice(format!("{} {} {} {}\n", self.n, self.c, self.h, self.w).as_bytes());
        for &x in &self.data {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::decode(path, "missing header line"))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::decode(path, "header is not ASCII"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::decode(path, format!("bad dimension {t:?}"))))
            .collect::<Result<_>>()?;
        let [n, c, h, w] = dims[..] else {
            return Err(Error::decode(path, format!("expected 4 dimensions, got {}", dims.len())));
        };
        Self::check_shape(n, c, h, w).map_err(|_| Error::decode(path, "zero-sized shape"))?;
        let payload = &bytes[newline + 1..];
        let count = n * c * h * w;
        if payload.len() != 4 * count {
            return Err(Error::decode(
                path,
                format!("payload holds {} bytes, shape needs {}", payload.len(), 4 * count),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Self { n, c, h, w, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_nchw() {
        let mut t = Tensor4::zeros(2, 3, 4, 5).unwrap();
        t.set(1, 2, 3, 4, 7.0);
        assert_eq!(t.index(1, 2, 3, 4), ((1 * 3 + 2) * 4 + 3) * 5 + 4);
        assert_eq!(t.data()[119], 7.0);
        assert_eq!(t.get(1, 2, 3, 4), 7.0);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(Tensor4::zeros(1, 0, 2, 2).is_err());
        assert!(Tensor4::from_vec(1, 1, 1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn plane_is_the_right_window() {
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let t = Tensor4::from_vec(2, 2, 2, 3, data).unwrap();
        assert_eq!(t.plane(1, 0), &[12.0, 13.0, 14.0, 15.0, 16.0, 17.0]);
    }

    #[test]
    fn file_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.t4");
        let data: Vec<f64> = (0..12).map(|i| (i as f64) * 0.25 - 1.0).collect();
        let t = Tensor4::from_vec(1, 3, 2, 2, data).unwrap();
        t.save(&path).unwrap();
        let back = Tensor4::load(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn load_rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.t4");
        std::fs::write(&path, b"1 1 2 2\n\x00\x00\x00\x00").unwrap();
        assert!(Tensor4::load(&path).is_err());
    }

    #[test]
    fn load_rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.t4");
        std::fs::write(&path, b"1 1 2\n").unwrap();
        assert!(Tensor4::load(&path).is_err());
        std::fs::write(&path, b"no newline at all").unwrap();
        assert!(Tensor4::load(&path).is_err());
    }
}

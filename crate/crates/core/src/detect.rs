//! Classical pothole segmentation on transformed disparity images: Otsu
//! thresholding of the valid-value distribution plus a connected-component
//! area filter.
//!
//! Potholes are the *below-threshold* class — depressions have lower
//! disparity than the road plane, hence lower transformed values.

use crate::disparity::DisparityImage;
use crate::error::{Error, Result};
use crate::mask::LabelMask;
use crate::transform::RoadModel;

/// One 8-connected pothole region, pixels in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub id: usize,
    pub area: usize,
    /// Tight bounds as (min_u, min_v, max_u, max_v).
    pub bbox: (usize, usize, usize, usize),
    pub pixels: Vec<(usize, usize)>,
}

/// Otsu's threshold over a histogram of `bins` equal bins spanning
/// [min, max] of the finite inputs. Class means use bin centers; the
/// returned threshold is the upper edge of the chosen bin, and ties go to
/// the smallest threshold.
pub fn otsu_threshold(values: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::BadParameter(format!("need ≥ 2 bins, got {bins}")));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in &finite {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !(lo < hi) {
        return Err(Error::ConstantInput);
    }

    let width = (hi - lo) / bins as f64;
    let mut hist = vec![0u64; bins];
    for &x in &finite {
        let i = (((x - lo) / width) as usize).min(bins - 1);
        hist[i] += 1;
    }
    let total = finite.len() as f64;
    let center = |i: usize| lo + (i as f64 + 0.5) * width;
    let grand: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| h as f64 * center(i))
        .sum();

    // Sweep the split point with running low-class sums; strict `>` keeps
    // the first (smallest) threshold on ties.
    let mut best = (f64::NEG_INFINITY, 0usize);
    let (mut count0, mut sum0) = (0.0f64, 0.0f64);
    for i in 0..bins - 1 {
        count0 += hist[i] as f64;
        sum0 += hist[i] as f64 * center(i);
        if count0 == 0.0 || count0 == total {
            continue;
        }
        let w0 = count0 / total;
        let w1 = 1.0 - w0;
        let mu0 = sum0 / count0;
        let mu1 = (grand - sum0) / (total - count0);
        let sigma_b = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if sigma_b > best.0 {
            best = (sigma_b, i);
        }
    }
    if best.0 < 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok(lo + (best.1 as f64 + 1.0) * width)
}

/// Threshold a transformed image and drop small regions: pothole = valid
/// pixel with value below the Otsu threshold (256 bins) of the valid values,
/// minus 8-connected components smaller than `min_area`. A constant (or
/// near-constant) image yields an all-background mask. The model parameter
/// ties the mask to the fit that produced `tdisp` and is validated only.
pub fn segment(tdisp: &DisparityImage, model: &RoadModel, min_area: usize) -> Result<LabelMask> {
    model.validate()?;
    if min_area < 1 {
        return Err(Error::BadParameter("min_area must be ≥ 1".into()));
    }
    let valid: Vec<f64> = tdisp.valid_pixels().map(|(_, _, g)| g).collect();
    let threshold = match otsu_threshold(&valid, 256) {
        Ok(t) => t,
        Err(Error::ConstantInput) => return Ok(LabelMask::empty(tdisp.width(), tdisp.height())),
        Err(e) => return Err(e),
    };

    let mut mask = LabelMask::empty(tdisp.width(), tdisp.height());
    for (u, v, g) in tdisp.valid_pixels() {
        if g < threshold {
            mask.set(u, v, true);
        }
    }
    if min_area > 1 {
        let mut filtered = LabelMask::empty(tdisp.width(), tdisp.height());
        for comp in connected_components(&mask) {
            if comp.area >= min_area {
                for (u, v) in comp.pixels {
                    filtered.set(u, v, true);
                }
            }
        }
        mask = filtered;
    }
    Ok(mask)
}

/// 8-connected components, ordered by (min_v, min_u) of their bounding
/// boxes; each component's pixels come out row-major.
pub fn connected_components(mask: &LabelMask) -> Vec<Component> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();

    for v0 in 0..h {
        for u0 in 0..w {
            if !mask.get(u0, v0) || seen[v0 * w + u0] {
                continue;
            }
            stack.push((u0, v0));
            seen[v0 * w + u0] = true;
            let mut pixels = Vec::new();
            while let Some((u, v)) = stack.pop() {
                pixels.push((u, v));
                let us = u.saturating_sub(1)..=(u + 1).min(w - 1);
                for vn in v.saturating_sub(1)..=(v + 1).min(h - 1) {
                    for un in us.clone() {
                        if mask.get(un, vn) && !seen[vn * w + un] {
                            seen[vn * w + un] = true;
                            stack.push((un, vn));
                        }
                    }
                }
            }
            pixels.sort_unstable_by_key(|&(u, v)| (v, u));
            let bbox = pixels.iter().fold(
                (usize::MAX, usize::MAX, 0usize, 0usize),
                |(lu, lv, hu, hv), &(u, v)| (lu.min(u), lv.min(v), hu.max(u), hv.max(v)),
            );
            comps.push(Component {
                id: 0,
                area: pixels.len(),
                bbox,
                pixels,
            });
        }
    }
    comps.sort_by_key(|c| (c.bbox.1, c.bbox.0));
    for (i, c) in comps.iter_mut().enumerate() {
        c.id = i;
    }
    comps
}

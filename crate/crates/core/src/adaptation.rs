//! Pure evaluators for the adversarial-adaptation objective: discriminator
//! loss, cycle-reconstruction loss, the six-term full objective, and the
//! random ground-truth mask generator behind synthetic training pairs.
//!
//! No training happens here — these are total, brute-force-verifiable
//! functions over supplied batches.

use crate::error::{Error, Result};
use crate::mask::{Ellipse, LabelMask};
use crate::rng::{self, SeededRng};

/// Log arguments are clamped to [ε, 1−ε] so the evaluators stay total even
/// on ideal discriminator outputs.
pub const PROB_EPSILON: f64 = 1e-12;

/// Discriminator outputs on one batch, clamped into [ε, 1−ε] at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch {
    values: Vec<f64>,
}

impl ProbBatch {
    /// Finite inputs only; values outside (0, 1) are clamped, not rejected.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTerm(*bad));
        }
        Ok(Self {
            values: values
                .iter()
                .map(|v| v.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON))
                .collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Equal-shaped rasters forming one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    width: usize,
    height: usize,
    items: Vec<Vec<f64>>,
}

impl ImageBatch {
    pub fn new(width: usize, height: usize, items: Vec<Vec<f64>>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for item in &items {
            if item.len() != width * height {
                return Err(Error::TensorShape(format!(
                    "batch item holds {} pixels, shape {width}x{height} needs {}",
                    item.len(),
                    width * height
                )));
            }
        }
        Ok(Self { width, height, items })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Vec<f64>] {
        &self.items
    }
}

/// `mean(ln D(real)) + mean(ln(1 − D(fake)))`. Always ≤ 0; the supremum 0
/// is approached by a perfect discriminator (and capped by the ε clamp).
pub fn gan_loss(d_real: &ProbBatch, d_fake: &ProbBatch) -> f64 {
    let real: f64 = d_real.values.iter().map(|v| v.ln()).sum::<f64>() / d_real.len() as f64;
    let fake: f64 =
        d_fake.values.iter().map(|v| (1.0 - v).ln()).sum::<f64>() / d_fake.len() as f64;
    real + fake
}

/// One directional cycle term: the batch mean of the mean absolute per-pixel
/// reconstruction error. Callers sum both directions.
pub fn cycle_loss(original: &ImageBatch, reconstructed: &ImageBatch) -> Result<f64> {
    if original.shape() != reconstructed.shape() || original.len() != reconstructed.len() {
        return Err(Error::TensorShape(format!(
            "cycle batches disagree: {:?} x{} vs {:?} x{}",
            original.shape(),
            original.len(),
            reconstructed.shape(),
            reconstructed.len()
        )));
    }
    let area = (original.width * original.height) as f64;
    let total: f64 = original
        .items
        .iter()
        .zip(&reconstructed.items)
        .map(|(a, b)| {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / area
        })
        .sum();
    Ok(total / original.len() as f64)
}

/// The six components of the full objective: four adversarial terms (two
/// generator/discriminator pairs per direction) and two cycle terms.
pub fn full_objective(terms: &[f64; 6]) -> Result<f64> {
    if let Some(bad) = terms.iter().find(|t| !t.is_finite()) {
        return Err(Error::NonFiniteTerm(*bad));
    }
    Ok(terms.iter().sum())
}

/// Deterministic random pothole ground truth: `n` filled rotated ellipses
/// (n drawn from `count_range`, inclusive), unioned and clipped to the
/// frame. Per ellipse the draws are semi-axes, rotation in [0, π), then a
/// margin-respecting center — in that order, from a ChaCha stream keyed by
/// `seed`.
pub fn random_gt_mask(
    width: usize,
    height: usize,
    seed: u64,
    count_range: (usize, usize),
    axis_range: (f64, f64),
) -> Result<LabelMask> {
    let (mask, _) = random_gt_mask_with_regions(width, height, seed, count_range, axis_range)?;
    Ok(mask)
}

/// Same as [`random_gt_mask`] but also returns the generating ellipses.
pub fn random_gt_mask_with_regions(
    width: usize,
    height: usize,
    seed: u64,
    count_range: (usize, usize),
    axis_range: (f64, f64),
) -> Result<(LabelMask, Vec<Ellipse>)> {
    if width == 0 || height == 0 {
        return Err(Error::BadParameter(format!("empty frame {width}x{height}")));
    }
    if count_range.0 > count_range.1 {
        return Err(Error::BadParameter(format!(
            "count range {count_range:?} is empty"
        )));
    }
    if !(axis_range.0 > 0.0 && axis_range.0 <= axis_range.1) {
        return Err(Error::BadParameter(format!(
            "axis range {axis_range:?} is not a positive interval"
        )));
    }
    let margin = axis_range.1 + 1.0;
    if 2.0 * margin >= width as f64 || 2.0 * margin >= height as f64 {
        return Err(Error::BadParameter(format!(
            "axis range {axis_range:?} exceeds the {width}x{height} frame"
        )));
    }

    let mut r = seeded_stream(seed);
    let n = rng::uniform_usize(&mut r, count_range.0, count_range.1);
    let mut mask = LabelMask::empty(width, height);
    let mut regions = Vec::with_capacity(n);
    for _ in 0..n {
        let semi_a = rng::uniform_in(&mut r, axis_range.0, axis_range.1);
        let semi_b = rng::uniform_in(&mut r, axis_range.0, axis_range.1);
        let rotation = rng::uniform_in(&mut r, 0.0, std::f64::consts::PI);
        let center_u = rng::uniform_in(&mut r, margin, width as f64 - 1.0 - margin);
        let center_v = rng::uniform_in(&mut r, margin, height as f64 - 1.0 - margin);
        let e = Ellipse { center_u, center_v, semi_a, semi_b, rotation };
        e.rasterize_into(&mut mask);
        regions.push(e);
    }
    Ok((mask, regions))
}

fn seeded_stream(seed: u64) -> SeededRng {
    rng::seeded(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(values: &[f64]) -> ProbBatch {
        ProbBatch::new(values.to_vec()).unwrap()
    }

    #[test]
    fn prob_batch_clamps_and_validates() {
        assert!(matches!(ProbBatch::new(vec![]), Err(Error::EmptyBatch)));
        assert!(ProbBatch::new(vec![0.5, f64::NAN]).is_err());
        let b = probs(&[0.0, 1.0, 0.5]);
        assert_eq!(b.values()[0], PROB_EPSILON);
        assert_eq!(b.values()[1], 1.0 - PROB_EPSILON);
        assert_eq!(b.values()[2], 0.5);
    }

    #[test]
    fn gan_loss_at_the_symmetric_point() {
        let half = probs(&[0.5, 0.5, 0.5]);
        let loss = gan_loss(&half, &half);
        assert!(
            (loss - (-1.3862943611198906)).abs() <= 1e-15,
            "2·ln(1/2) expected, got {loss}"
        );
    }

    #[test]
    fn perfect_discriminator_approaches_zero() {
        let loss = gan_loss(&probs(&[1.0]), &probs(&[0.0]));
        assert!(loss < 0.0, "strictly below the supremum");
        assert!(loss.abs() <= 3e-12, "clamped limit ≈ −2ε, got {loss}");
    }

    #[test]
    fn gan_loss_matches_scalar_oracle() {
        let loss = gan_loss(&probs(&[0.9, 0.8]), &probs(&[0.3, 0.1]));
        // ln(.9)/2 + ln(.8)/2 + ln(.7)/2 + ln(.9)/2, worked out separately.
        let expect = -0.39526976328429736;
        assert!((loss - expect).abs() <= 1e-15, "{loss} vs {expect}");
    }

    #[test]
    fn gan_loss_is_monotone_and_nonpositive() {
        let mut r = rng::seeded(71);
        for _ in 0..200 {
            let real: Vec<f64> = (0..4).map(|_| rng::uniform(&mut r)).collect();
            let fake: Vec<f64> = (0..4).map(|_| rng::uniform(&mut r)).collect();
            let base = gan_loss(&probs(&real), &probs(&fake));
            assert!(base <= 0.0, "gan loss {base} must be ≤ 0");
            // Raising a real output raises the loss; raising a fake lowers it.
            let mut real_up = real.clone();
            real_up[0] = (real_up[0] + 0.1).min(1.0);
            if real_up[0] > real[0] {
                assert!(gan_loss(&probs(&real_up), &probs(&fake)) > base);
            }
            let mut fake_up = fake.clone();
            fake_up[0] = (fake_up[0] + 0.1).min(1.0);
            if fake_up[0] > fake[0] {
                assert!(gan_loss(&probs(&real), &probs(&fake_up)) < base);
            }
        }
    }

    #[test]
    fn cycle_loss_of_identity_is_zero() {
        let batch = ImageBatch::new(2, 2, vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(cycle_loss(&batch, &batch.clone()).unwrap(), 0.0);
    }

    #[test]
    fn cycle_loss_of_unit_offset_is_one() {
        let zeros = ImageBatch::new(3, 2, vec![vec![0.0; 6], vec![0.0; 6]]).unwrap();
        let ones = ImageBatch::new(3, 2, vec![vec![1.0; 6], vec![1.0; 6]]).unwrap();
        assert_eq!(cycle_loss(&zeros, &ones).unwrap(), 1.0);
    }

    #[test]
    fn cycle_loss_matches_double_loop_oracle() {
        let mut r = rng::seeded(3);
        let a: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..16).map(|_| rng::uniform_in(&mut r, -5.0, 5.0)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..16).map(|_| rng::uniform_in(&mut r, -5.0, 5.0)).collect())
            .collect();
        let loss = cycle_loss(
            &ImageBatch::new(4, 4, a.clone()).unwrap(),
            &ImageBatch::new(4, 4, b.clone()).unwrap(),
        )
        .unwrap();
        let mut oracle = 0.0;
        for i in 0..3 {
            let mut item = 0.0;
            for j in 0..16 {
                item += (a[i][j] - b[i][j]).abs();
            }
            oracle += item / 16.0;
        }
        oracle /= 3.0;
        assert!((loss - oracle).abs() <= 1e-12, "{loss} vs {oracle}");
        assert!(loss >= 0.0);
    }

    #[test]
    fn cycle_loss_rejects_mismatched_batches() {
        let a = ImageBatch::new(2, 2, vec![vec![0.0; 4]]).unwrap();
        let b = ImageBatch::new(2, 3, vec![vec![0.0; 6]]).unwrap();
        assert!(cycle_loss(&a, &b).is_err());
        let c = ImageBatch::new(2, 2, vec![vec![0.0; 4], vec![0.0; 4]]).unwrap();
        assert!(cycle_loss(&a, &c).is_err());
    }

    #[test]
    fn full_objective_sums_and_rejects_non_finite() {
        assert_eq!(full_objective(&[0.0; 6]).unwrap(), 0.0);
        let sym = 2.0 * 0.5f64.ln();
        let total = full_objective(&[sym, sym, sym, sym, 0.0, 0.0]).unwrap();
        assert!(
            (total - (-5.545177444479562)).abs() <= 1e-14,
            "8·ln(1/2) expected, got {total}"
        );
        assert!(full_objective(&[0.0, 0.0, f64::INFINITY, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn full_objective_is_permutation_invariant_and_linear() {
        let mut r = rng::seeded(73);
        for _ in 0..100 {
            let mut terms = [0.0; 6];
            for t in terms.iter_mut() {
                *t = rng::uniform_in(&mut r, -10.0, 10.0);
            }
            let total = full_objective(&terms).unwrap();
            let oracle: f64 = terms.iter().sum();
            assert!((total - oracle).abs() <= 1e-12);
            let mut rotated = terms;
            rotated.rotate_left(2);
            assert!((full_objective(&rotated).unwrap() - total).abs() <= 1e-12);
            let mut bumped = terms;
            bumped[3] += 1.5;
            assert!(
                (full_objective(&bumped).unwrap() - total - 1.5).abs() <= 1e-12,
                "linearity in a single term"
            );
        }
    }

    #[test]
    fn empty_count_range_gives_empty_mask() {
        let mask = random_gt_mask(64, 48, 9, (0, 0), (4.0, 8.0)).unwrap();
        assert_eq!(mask.area(), 0);
    }

    #[test]
    fn masks_are_seed_deterministic() {
        let a = random_gt_mask(64, 48, 42, (1, 3), (4.0, 8.0)).unwrap();
        let b = random_gt_mask(64, 48, 42, (1, 3), (4.0, 8.0)).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        let c = random_gt_mask(64, 48, 43, (1, 3), (4.0, 8.0)).unwrap();
        assert_ne!(a.pixels(), c.pixels());
    }

    #[test]
    fn mask_area_matches_inside_ellipse_oracle() {
        // One circle of radius 10 (axes pinned); every frame pixel re-tested
        // against the ellipse equation independently of the rasterizer path.
        let (mask, regions) =
            random_gt_mask_with_regions(64, 48, 42, (1, 1), (10.0, 10.0)).unwrap();
        assert_eq!(regions.len(), 1);
        let e = &regions[0];
        let mut oracle = 0usize;
        for v in 0..48 {
            for u in 0..64 {
                if e.contains(u as f64, v as f64) {
                    oracle += 1;
                    assert!(mask.get(u, v), "pixel ({u}, {v}) inside but unmarked");
                } else {
                    assert!(!mask.get(u, v), "pixel ({u}, {v}) outside but marked");
                }
            }
        }
        assert_eq!(mask.area(), oracle);
    }

    #[test]
    fn every_mask_pixel_lies_in_a_generating_ellipse() {
        let (mask, regions) =
            random_gt_mask_with_regions(96, 72, 5, (2, 4), (5.0, 12.0)).unwrap();
        for v in 0..72 {
            for u in 0..96 {
                if mask.get(u, v) {
                    assert!(
                        regions.iter().any(|e| e.contains(u as f64, v as f64)),
                        "orphan pothole pixel ({u}, {v})"
                    );
                }
            }
        }
    }

    #[test]
    fn mask_parameter_validation() {
        assert!(random_gt_mask(64, 48, 1, (3, 1), (4.0, 8.0)).is_err());
        assert!(random_gt_mask(64, 48, 1, (1, 1), (0.0, 8.0)).is_err());
        assert!(random_gt_mask(20, 20, 1, (1, 1), (15.0, 15.0)).is_err());
        assert!(random_gt_mask(0, 20, 1, (1, 1), (2.0, 3.0)).is_err());
    }
}

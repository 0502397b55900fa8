//! Segmentation evaluation: confusion counts, F-score, IoU, dataset means,
//! and the bookkeeping for sampling-multiplier experiments.

use crate::error::{Error, Result};
use crate::mask::LabelMask;

/// Per-image pixel counts; pothole is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// F-score and intersection-over-union, both in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegMetrics {
    pub fsc: f64,
    pub iou: f64,
}

/// One row of a sampling-multiplier experiment: the multiplier λ, how many
/// iterations training took, and the ratio δ against the baseline run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentLog {
    pub lambda: f64,
    pub iterations_to_converge: u64,
    pub delta: f64,
}

/// Pixelwise confusion of a predicted mask against ground truth.
pub fn confusion(pred: &LabelMask, gt: &LabelMask) -> Result<ConfusionCounts> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::ShapeMismatch {
            left_width: pred.width(),
            left_height: pred.height(),
            right_width: gt.width(),
            right_height: gt.height(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, g) in pred.pixels().iter().zip(gt.pixels()) {
        match (p, g) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// `iou = tp/(tp+fp+fn)`, `fsc = 2tp/(2tp+fp+fn)`. When both masks are empty
/// (tp+fp+fn == 0) both metrics are 1: agreement on the absence of potholes,
/// which keeps dataset means defined on pothole-free frames.
pub fn fsc_iou(c: &ConfusionCounts) -> SegMetrics {
    let union = c.true_pos + c.false_pos + c.false_neg;
    if union == 0 {
        return SegMetrics { fsc: 1.0, iou: 1.0 };
    }
    let tp = c.true_pos as f64;
    SegMetrics {
        fsc: 2.0 * tp / (2.0 * tp + c.false_pos as f64 + c.false_neg as f64),
        iou: tp / union as f64,
    }
}

/// Unweighted per-image means (mFsc, mIoU); compensated so aggregation order
/// cannot shift the result past 1e-12.
pub fn mean_metrics(per_image: &[SegMetrics]) -> Result<(f64, f64)> {
    if per_image.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (mut fsum, mut fcomp) = (0.0f64, 0.0f64);
    let (mut isum, mut icomp) = (0.0f64, 0.0f64);
    for m in per_image {
        let t = fsum + m.fsc;
        fcomp += if fsum.abs() >= m.fsc.abs() { (fsum - t) + m.fsc } else { (m.fsc - t) + fsum };
        fsum = t;
        let t = isum + m.iou;
        icomp += if isum.abs() >= m.iou.abs() { (isum - t) + m.iou } else { (m.iou - t) + isum };
        isum = t;
    }
    let n = per_image.len() as f64;
    Ok(((fsum + fcomp) / n, (isum + icomp) / n))
}

/// δ = augmented iterations / baseline iterations; δ < 1 means the augmented
/// setup converges faster.
pub fn delta_ratio(aug_iterations: u64, baseline_iterations: u64) -> Result<f64> {
    if baseline_iterations == 0 {
        return Err(Error::BadParameter("baseline iteration count is zero".into()));
    }
    Ok(aug_iterations as f64 / baseline_iterations as f64)
}

// ── CSV rows ───────────────────────────────────────────────────────────────

pub const PER_IMAGE_CSV_HEADER: &str = "image,tp,fp,fn,tn,fsc,iou";
pub const SUMMARY_CSV_HEADER: &str = "mFsc,mIoU,n_images";

pub fn per_image_csv_row(image: &str, c: &ConfusionCounts, m: &SegMetrics) -> String {
    format!(
        "{image},{},{},{},{},{},{}",
        c.true_pos,
        c.false_pos,
        c.false_neg,
        c.true_neg,
        crate::io::full_precision(m.fsc),
        crate::io::full_precision(m.iou)
    )
}

pub fn summary_csv_row(mfsc: f64, miou: f64, n_images: usize) -> String {
    format!(
        "{},{},{n_images}",
        crate::io::full_precision(mfsc),
        crate::io::full_precision(miou)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn mask_from(width: usize, height: usize, on: &[(usize, usize)]) -> LabelMask {
        let mut m = LabelMask::empty(width, height);
        for &(u, v) in on {
            m.set(u, v, true);
        }
        m
    }

    #[test]
    fn identical_masks_count_cleanly() {
        let on: Vec<(usize, usize)> = (0..10).map(|i| (i, 3)).collect();
        let a = mask_from(10, 10, &on);
        let c = confusion(&a, &a.clone()).unwrap();
        assert_eq!(
            c,
            ConfusionCounts { true_pos: 10, false_pos: 0, false_neg: 0, true_neg: 90 }
        );
    }

    #[test]
    fn empty_prediction_counts_misses() {
        let pred = LabelMask::empty(10, 10);
        let gt = mask_from(10, 10, &(0..10).map(|i| (i, 5)).collect::<Vec<_>>());
        let c = confusion(&pred, &gt).unwrap();
        assert_eq!(c.false_neg, 10);
        assert_eq!(c.true_pos, 0);
        assert_eq!(c.true_neg, 90);
    }

    #[test]
    fn confusion_matches_pixel_loop_oracle() {
        let mut r = rng::seeded(17);
        let mut pred = LabelMask::empty(8, 8);
        let mut gt = LabelMask::empty(8, 8);
        for v in 0..8 {
            for u in 0..8 {
                pred.set(u, v, rng::uniform(&mut r) < 0.4);
                gt.set(u, v, rng::uniform(&mut r) < 0.4);
            }
        }
        let c = confusion(&pred, &gt).unwrap();
        // Independent loop, counting each cell of the 2×2 table separately.
        let (mut tp, mut fp, mut fng, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for v in 0..8 {
            for u in 0..8 {
                match (pred.get(u, v), gt.get(u, v)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fng += 1,
                    (false, false) => tn += 1,
                }
            }
        }
        assert_eq!((c.true_pos, c.false_pos, c.false_neg, c.true_neg), (tp, fp, fng, tn));
        assert_eq!(c.total(), 64);
    }

    #[test]
    fn confusion_rejects_shape_mismatch() {
        let a = LabelMask::empty(4, 4);
        let b = LabelMask::empty(4, 5);
        assert!(confusion(&a, &b).is_err());
    }

    #[test]
    fn hand_worked_counts() {
        let m = fsc_iou(&ConfusionCounts { true_pos: 6, false_pos: 2, false_neg: 2, true_neg: 0 });
        assert!((m.iou - 0.6).abs() < 1e-15);
        assert!((m.fsc - 0.75).abs() < 1e-15);
        assert!((m.fsc - 2.0 * 0.6 / 1.6).abs() < 1e-15);
    }

    #[test]
    fn empty_agreement_is_perfect() {
        let m = fsc_iou(&ConfusionCounts::default());
        assert_eq!((m.fsc, m.iou), (1.0, 1.0));
    }

    #[test]
    fn exact_match_is_perfect() {
        let m = fsc_iou(&ConfusionCounts { true_pos: 37, ..Default::default() });
        assert_eq!((m.fsc, m.iou), (1.0, 1.0));
    }

    #[test]
    fn dice_jaccard_identity_and_ordering() {
        let mut r = rng::seeded(23);
        for _ in 0..1000 {
            let c = ConfusionCounts {
                true_pos: rng::uniform_usize(&mut r, 0, 500) as u64,
                false_pos: rng::uniform_usize(&mut r, 0, 500) as u64,
                false_neg: rng::uniform_usize(&mut r, 0, 500) as u64,
                true_neg: rng::uniform_usize(&mut r, 0, 500) as u64,
            };
            let m = fsc_iou(&c);
            if c.true_pos + c.false_pos + c.false_neg > 0 {
                assert!(
                    (m.fsc - 2.0 * m.iou / (1.0 + m.iou)).abs() <= 1e-12,
                    "identity broken at {c:?}"
                );
            }
            assert!(m.iou >= 0.0 && m.iou <= m.fsc && m.fsc <= 1.0, "{m:?}");
            // Swapping pred/gt swaps fp and fn; both metrics must survive.
            let swapped = fsc_iou(&ConfusionCounts {
                false_pos: c.false_neg,
                false_neg: c.false_pos,
                ..c
            });
            assert_eq!(m, swapped);
        }
    }

    #[test]
    fn means_match_scalar_oracle() {
        let mut r = rng::seeded(29);
        let ms: Vec<SegMetrics> = (0..10)
            .map(|_| SegMetrics {
                fsc: rng::uniform(&mut r),
                iou: rng::uniform(&mut r),
            })
            .collect();
        let (mfsc, miou) = mean_metrics(&ms).unwrap();
        let oracle_f: f64 = ms.iter().map(|m| m.fsc).sum::<f64>() / 10.0;
        let oracle_i: f64 = ms.iter().map(|m| m.iou).sum::<f64>() / 10.0;
        assert!((mfsc - oracle_f).abs() <= 1e-12);
        assert!((miou - oracle_i).abs() <= 1e-12);
    }

    #[test]
    fn mean_of_single_image_is_itself() {
        let m = SegMetrics { fsc: 0.625, iou: 0.5 };
        assert_eq!(mean_metrics(&[m]).unwrap(), (0.625, 0.5));
        let two = [SegMetrics { fsc: 1.0, iou: 1.0 }, SegMetrics { fsc: 0.0, iou: 0.0 }];
        assert_eq!(mean_metrics(&two).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn mean_rejects_empty_input() {
        assert!(matches!(mean_metrics(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn delta_ratio_examples() {
        assert_eq!(delta_ratio(500, 1000).unwrap(), 0.5);
        assert_eq!(delta_ratio(700, 700).unwrap(), 1.0);
        assert!((delta_ratio(1300, 1000).unwrap() - 1.3).abs() < 1e-15);
        assert!(delta_ratio(1, 0).is_err());
    }

    #[test]
    fn csv_rows_have_the_documented_shape() {
        let c = ConfusionCounts { true_pos: 6, false_pos: 2, false_neg: 2, true_neg: 90 };
        let row = per_image_csv_row("scene_000", &c, &fsc_iou(&c));
        assert!(row.starts_with("scene_000,6,2,2,90,"));
        assert_eq!(row.split(',').count(), 7);
        assert_eq!(PER_IMAGE_CSV_HEADER.split(',').count(), 7);
        assert_eq!(summary_csv_row(1.0, 1.0, 3).split(',').count(), 3);
    }
}

//! Frame-level and pixel-level ROC/AUC/EER evaluation.
//!
//! Frame-level evaluation judges only whether abnormal frames are flagged;
//! pixel-level evaluation additionally requires localization: a detection
//! on an abnormal frame counts as a true positive only when it covers at
//! least 40% of that frame's ground-truth abnormal pixels.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frame::GroundTruth;
use crate::fuse::FrameResult;

/// Confusion counts for one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_neg: u64,
    pub false_pos: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn new(true_pos: u64, false_neg: u64, false_pos: u64, true_neg: u64) -> Self {
        Self {
            true_pos,
            false_neg,
            false_pos,
            true_neg,
        }
    }

    /// Total positives `P = TP + FN`.
    pub fn positives(&self) -> u64 {
        self.true_pos + self.false_neg
    }

    /// Total negatives `N = FP + TN`.
    pub fn negatives(&self) -> u64 {
        self.false_pos + self.true_neg
    }

    /// True positive rate `TP / (TP + FN)`.
    pub fn tpr(&self) -> f64 {
        self.true_pos as f64 / self.positives() as f64
    }

    /// False positive rate `FP / (FP + TN)`.
    pub fn fpr(&self) -> f64 {
        self.false_pos as f64 / self.negatives() as f64
    }

    /// False negative rate `FN / (TP + FN)`; complement of the TPR.
    pub fn fnr(&self) -> f64 {
        self.false_neg as f64 / self.positives() as f64
    }
}

/// One ROC sweep point: the confusion rates obtained when a sample is
/// called positive iff its score is strictly greater than `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Full ROC sweep with its two scalar summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ordered from the (0,0) end (highest threshold) to the (1,1) end.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub eer: f64,
}

/// Sweeps a threshold over all distinct scores and returns the resulting
/// curve. Equal scores are treated as a single threshold, which gives tied
/// pairs half credit in the AUC. The endpoints (0,0) and (1,1) are always
/// present.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("roc scores"));
    }
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push(RocPoint {
        threshold: scores[order[0]],
        fpr: 0.0,
        tpr: 0.0,
    });
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        // consume the whole tie group at score s
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = if i < order.len() {
            scores[order[i]]
        } else {
            f64::NEG_INFINITY
        };
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg,
            tpr: tp as f64 / pos,
        });
    }

    let auc = trapezoid_auc(&points);
    let (eer, _) = eer_point(&points);
    Ok(RocCurve { points, auc, eer })
}

fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0;
    }
    auc
}

/// Equal error rate: the FPR where the curve crosses `FPR = 1 - TPR`,
/// linearly interpolated between adjacent sweep points.
pub fn eer(curve: &RocCurve) -> f64 {
    eer_point(&curve.points).0
}

/// The interpolated crossing point `(FPR, TPR)` with `FPR = 1 - TPR`.
/// The (0,0) and (1,1) endpoints guarantee a crossing exists.
pub fn eer_point(points: &[RocPoint]) -> (f64, f64) {
    // g = FPR + TPR - 1 runs from -1 at (0,0) to +1 at (1,1), non-decreasing.
    let g = |p: &RocPoint| p.fpr + p.tpr - 1.0;
    for w in points.windows(2) {
        let g0 = g(&w[0]);
        let g1 = g(&w[1]);
        if g0 == 0.0 {
            return (w[0].fpr, w[0].tpr);
        }
        if g0 < 0.0 && g1 >= 0.0 {
            let t = g0 / (g0 - g1);
            let fpr = w[0].fpr + t * (w[1].fpr - w[0].fpr);
            let tpr = w[0].tpr + t * (w[1].tpr - w[0].tpr);
            return (fpr, tpr);
        }
    }
    let last = points.last().expect("curve has endpoints");
    (last.fpr, last.tpr)
}

/// Frame-level confusion at a fixed threshold: a frame is called abnormal
/// iff its score is strictly greater than `threshold`.
pub fn frame_level_labels(
    results: &[FrameResult],
    gt: &GroundTruth,
    threshold: f64,
) -> Result<ConfusionCounts> {
    if results.len() != gt.len() {
        return Err(Error::LengthMismatch {
            scores: results.len(),
            labels: gt.len(),
        });
    }
    let mut c = ConfusionCounts::new(0, 0, 0, 0);
    for r in results {
        let predicted = r.frame_score > threshold;
        match (gt.flag(r.t), predicted) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_neg += 1,
            (false, true) => c.false_pos += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// Smallest covered-pixel count that satisfies the "at least 40%" rule for
/// a mask of `mask_pixels` abnormal pixels. Exact integer arithmetic: `c`
/// covers iff `5c >= 2m`.
fn coverage_quota(mask_pixels: usize) -> usize {
    (2 * mask_pixels).div_ceil(5)
}

/// Pixel-level confusion at a fixed threshold.
///
/// An abnormal frame is a true positive iff the thresholded map covers at
/// least 40% of its ground-truth abnormal pixels (inclusive boundary,
/// computed exactly), otherwise a false negative. A normal frame is a
/// false positive iff any pixel exceeds the threshold.
pub fn pixel_level_labels(
    results: &[FrameResult],
    gt: &GroundTruth,
    threshold: f64,
) -> Result<ConfusionCounts> {
    if results.len() != gt.len() {
        return Err(Error::LengthMismatch {
            scores: results.len(),
            labels: gt.len(),
        });
    }
    let mut c = ConfusionCounts::new(0, 0, 0, 0);
    for r in results {
        if gt.flag(r.t) {
            let mask = gt.mask(r.t).ok_or(Error::MissingMask { frame: r.t })?;
            if mask.dimensions() != r.pixel_map.dimensions() {
                return Err(Error::GeometryMismatch {
                    expected: r.pixel_map.dimensions(),
                    got: mask.dimensions(),
                });
            }
            let m = mask.count();
            if m == 0 {
                return Err(Error::MissingMask { frame: r.t });
            }
            let mut covered = 0usize;
            for y in 0..mask.height() {
                for x in 0..mask.width() {
                    if mask.get(x, y) && r.pixel_map.get(x, y) > threshold {
                        covered += 1;
                    }
                }
            }
            if covered >= coverage_quota(m) {
                c.true_pos += 1;
            } else {
                c.false_neg += 1;
            }
        } else if r.pixel_map.as_slice().iter().any(|&v| v > threshold) {
            c.false_pos += 1;
        } else {
            c.true_neg += 1;
        }
    }
    Ok(c)
}

/// Per-frame scores whose threshold sweep reproduces `pixel_level_labels`
/// exactly, so the pixel-level ROC can reuse [`roc`].
///
/// For an abnormal frame the score is the smallest map value that still
/// satisfies the 40% coverage rule (the quota-th largest value on the
/// mask); for a normal frame it is the map maximum (any pixel above the
/// threshold makes it a false positive).
pub fn pixel_frame_scores(results: &[FrameResult], gt: &GroundTruth) -> Result<Vec<f64>> {
    if results.len() != gt.len() {
        return Err(Error::LengthMismatch {
            scores: results.len(),
            labels: gt.len(),
        });
    }
    let mut scores = Vec::with_capacity(results.len());
    for r in results {
        if gt.flag(r.t) {
            let mask = gt.mask(r.t).ok_or(Error::MissingMask { frame: r.t })?;
            let mut vals: Vec<f64> = Vec::new();
            for y in 0..mask.height() {
                for x in 0..mask.width() {
                    if mask.get(x, y) {
                        vals.push(r.pixel_map.get(x, y));
                    }
                }
            }
            if vals.is_empty() {
                return Err(Error::MissingMask { frame: r.t });
            }
            let quota = coverage_quota(vals.len());
            // quota >= 1 because the mask is nonempty; pick the quota-th
            // largest masked value.
            let k = quota - 1;
            vals.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
            scores.push(vals[k]);
        } else {
            scores.push(r.pixel_map.max_value());
        }
    }
    Ok(scores)
}

/// Mean per-frame seconds for each pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub preprocess: f64,
    pub optical_flow: f64,
    pub representation: f64,
    pub classification: f64,
    /// Exactly the sum of the four stage means.
    pub total: f64,
}

/// Averages recorded stage times over all frames. `total` is the exact sum
/// of the stage means.
pub fn timing_report(results: &[FrameResult]) -> TimingReport {
    let n = results.len().max(1) as f64;
    let mut pre = 0.0;
    let mut flow = 0.0;
    let mut rep = 0.0;
    let mut cls = 0.0;
    for r in results {
        pre += r.stage_times.preprocess;
        flow += r.stage_times.optical_flow;
        rep += r.stage_times.representation;
        cls += r.stage_times.classification;
    }
    let (pre, flow, rep, cls) = (pre / n, flow / n, rep / n, cls / n);
    TimingReport {
        preprocess: pre,
        optical_flow: flow,
        representation: rep,
        classification: cls,
        total: pre + flow + rep + cls,
    }
}

//! Fusion of the appearance-motion and motion-only analysis paths.
//!
//! The appearance path delivers per-patch abnormality scores, the motion
//! path a per-pixel boolean mask. Both are merged into one per-pixel
//! abnormality map by a convex combination; the frame score is the map
//! maximum, so an anomaly anywhere makes the whole frame abnormal.

use crate::error::{Error, Result};
use crate::image::{BitMask, ScalarImage};
use crate::patches::GridSpec;

/// Wall-clock seconds spent in each pipeline stage for one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub preprocess: f64,
    pub optical_flow: f64,
    pub representation: f64,
    pub classification: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.preprocess + self.optical_flow + self.representation + self.classification
    }
}

/// Detection output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub t: usize,
    /// Maximum of `pixel_map`; higher means more abnormal.
    pub frame_score: f64,
    /// Per-pixel abnormality in `[0, 1]`.
    pub pixel_map: ScalarImage,
    pub stage_times: StageTimes,
}

impl FrameResult {
    /// An all-normal result (zero map, zero score) for frames the pipeline
    /// cannot analyze, e.g. the warm-up frames before the first full
    /// spatio-temporal stack exists.
    pub fn empty(t: usize, width: usize, height: usize) -> Self {
        Self {
            t,
            frame_score: 0.0,
            pixel_map: ScalarImage::new(width, height),
            stage_times: StageTimes::default(),
        }
    }
}

/// A patch origin paired with its appearance-path abnormality in `[0, 1]`.
pub type ScoredPatch = ((usize, usize), f64);

/// Merges patch abnormality scores with the motion mask.
///
/// The map is `alpha * A(p) + (1 - alpha) * M(p)` where `A(p)` is the
/// maximum abnormality over patches covering pixel `p` (zero where no patch
/// covers it) and `M(p)` is the motion mask bit. The frame score is the map
/// maximum.
pub fn fuse(
    t: usize,
    patch_scores: &[ScoredPatch],
    motion_mask: &BitMask,
    grid: &GridSpec,
    alpha: f64,
) -> Result<FrameResult> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParam("alpha must lie in [0, 1]"));
    }
    let (width, height) = motion_mask.dimensions();
    let p = grid.patch_size;
    let mut appearance = ScalarImage::new(width, height);
    for &((ox, oy), score) in patch_scores {
        if ox + p > width || oy + p > height {
            return Err(Error::GeometryMismatch {
                expected: (width, height),
                got: (ox + p, oy + p),
            });
        }
        for y in oy..oy + p {
            for x in ox..ox + p {
                if score > appearance.get(x, y) {
                    appearance.set(x, y, score);
                }
            }
        }
    }

    let mut pixel_map = ScalarImage::new(width, height);
    let mut frame_score = 0.0f64;
    for y in 0..height {
        for x in 0..width {
            let m = if motion_mask.get(x, y) { 1.0 } else { 0.0 };
            let v = alpha * appearance.get(x, y) + (1.0 - alpha) * m;
            pixel_map.set(x, y, v);
            if v > frame_score {
                frame_score = v;
            }
        }
    }

    Ok(FrameResult {
        t,
        frame_score,
        pixel_map,
        stage_times: StageTimes::default(),
    })
}

/// Converts a raw discriminator score (higher = more normal) into the
/// abnormality used by the fusion map.
pub fn abnormality(score: f64) -> f64 {
    1.0 - score
}

//! Motion-only analysis: histograms of flow direction and speed learned
//! from normal footage, with the lowest-frequency tail flagged abnormal.
//!
//! Direction and speed are binned independently; a bin set is abnormal when
//! its cumulative observation mass falls inside the tail fraction of the
//! count-sorted histogram. Never-observed (zero-count) bins are always
//! abnormal. At test time a pixel is flagged when it moves fast enough to
//! matter and either its direction bin or its speed bin is abnormal.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::BitMask;
use crate::optflow::FlowPolar;

pub const DEFAULT_HUE_BINS: usize = 36;
pub const DEFAULT_MAG_BINS: usize = 32;
/// Speeds at or above this map to the top magnitude bin.
pub const DEFAULT_MAG_CEILING: f64 = 10.0;
/// Pixels slower than this are treated as static background.
pub const DEFAULT_MIN_SPEED: f64 = 0.5;
/// Fraction of observation mass considered abnormal.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.05;

const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Binning parameters for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MotionParams {
    pub hue_bins: usize,
    pub mag_bins: usize,
    pub mag_ceiling: f64,
    pub min_speed: f64,
    pub tail_fraction: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            hue_bins: DEFAULT_HUE_BINS,
            mag_bins: DEFAULT_MAG_BINS,
            mag_ceiling: DEFAULT_MAG_CEILING,
            min_speed: DEFAULT_MIN_SPEED,
            tail_fraction: DEFAULT_TAIL_FRACTION,
        }
    }
}

/// Observation counts over direction and speed bins.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MotionHistogram {
    pub hue_bins: Vec<u64>,
    pub mag_bins: Vec<u64>,
    pub mag_ceiling: f64,
    /// Total observations; both channels count the same pixels.
    pub total: u64,
}

impl MotionHistogram {
    #[inline]
    pub fn hue_bin(&self, hue: f64) -> usize {
        bin_index(hue / TWO_PI, self.hue_bins.len())
    }

    #[inline]
    pub fn mag_bin(&self, magnitude: f64) -> usize {
        bin_index(magnitude / self.mag_ceiling, self.mag_bins.len())
    }
}

#[inline]
fn bin_index(fraction: f64, bins: usize) -> usize {
    let idx = (fraction * bins as f64) as i64;
    idx.clamp(0, bins as i64 - 1) as usize
}

/// Bin indices deemed abnormal, per channel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AbnormalValueSet {
    pub hue_abnormal: BTreeSet<usize>,
    pub mag_abnormal: BTreeSet<usize>,
    pub tail_fraction: f64,
}

/// The learned motion model: histogram, abnormal sets, and the speed floor
/// used while fitting.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MotionModel {
    pub histogram: MotionHistogram,
    pub abnormal: AbnormalValueSet,
    pub min_speed: f64,
}

impl MotionModel {
    /// Fits the histogram over training flows and takes the abnormal tail.
    pub fn learn(flows: &[FlowPolar], params: &MotionParams) -> Result<Self> {
        let histogram = fit(
            flows,
            params.hue_bins,
            params.mag_bins,
            params.mag_ceiling,
            params.min_speed,
        )?;
        let abnormal = tail(&histogram, params.tail_fraction)?;
        Ok(Self {
            histogram,
            abnormal,
            min_speed: params.min_speed,
        })
    }

    pub fn mask(&self, flow: &FlowPolar) -> Result<BitMask> {
        mask(flow, &self.abnormal, &self.histogram, self.min_speed)
    }
}

/// Accumulates direction/speed counts over every pixel moving at least
/// `min_speed`. Hue is binned uniformly over `[0, 2*pi)`, magnitude
/// uniformly over `[0, mag_ceiling]` with overflow clamped into the top
/// bin.
pub fn fit(
    flows: &[FlowPolar],
    hue_bins: usize,
    mag_bins: usize,
    mag_ceiling: f64,
    min_speed: f64,
) -> Result<MotionHistogram> {
    if flows.is_empty() {
        return Err(Error::EmptyInput("flow fields"));
    }
    if hue_bins == 0 || mag_bins == 0 || mag_ceiling <= 0.0 {
        return Err(Error::InvalidParam("histogram binning"));
    }
    let mut hist = MotionHistogram {
        hue_bins: vec![0; hue_bins],
        mag_bins: vec![0; mag_bins],
        mag_ceiling,
        total: 0,
    };
    for flow in flows {
        for (&hue, &mag) in flow.hue.iter().zip(&flow.magnitude) {
            if mag < min_speed {
                continue;
            }
            let hb = hist.hue_bin(hue);
            let mb = hist.mag_bin(mag);
            hist.hue_bins[hb] += 1;
            hist.mag_bins[mb] += 1;
            hist.total += 1;
        }
    }
    Ok(hist)
}

/// Longest prefix of bins, sorted ascending by count (ties broken by
/// ascending index), whose cumulative count stays within
/// `tail_fraction * total`. Zero-count bins sort first and contribute
/// nothing, so they are always abnormal.
fn tail_of_channel(bins: &[u64], tail_fraction: f64, total: u64) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..bins.len()).collect();
    order.sort_by_key(|&i| (bins[i], i));
    let budget = tail_fraction * total as f64;
    let mut cum = 0u64;
    let mut out = BTreeSet::new();
    for i in order {
        cum += bins[i];
        if cum as f64 <= budget {
            out.insert(i);
        } else {
            break;
        }
    }
    out
}

/// Takes the abnormal tail of both channels of a fitted histogram.
pub fn tail(hist: &MotionHistogram, tail_fraction: f64) -> Result<AbnormalValueSet> {
    if hist.total == 0 {
        return Err(Error::EmptyHistogram);
    }
    if !(0.0..=1.0).contains(&tail_fraction) {
        return Err(Error::InvalidParam("tail_fraction must lie in [0, 1]"));
    }
    Ok(AbnormalValueSet {
        hue_abnormal: tail_of_channel(&hist.hue_bins, tail_fraction, hist.total),
        mag_abnormal: tail_of_channel(&hist.mag_bins, tail_fraction, hist.total),
        tail_fraction,
    })
}

/// Flags every pixel whose magnitude is at least `min_speed` and whose
/// direction bin or speed bin is abnormal.
pub fn mask(
    flow: &FlowPolar,
    sets: &AbnormalValueSet,
    hist: &MotionHistogram,
    min_speed: f64,
) -> Result<BitMask> {
    for (set, bins) in [
        (&sets.hue_abnormal, hist.hue_bins.len()),
        (&sets.mag_abnormal, hist.mag_bins.len()),
    ] {
        if let Some(&max) = set.iter().next_back() {
            if max >= bins {
                return Err(Error::BinCountMismatch {
                    expected: bins,
                    got: max + 1,
                });
            }
        }
    }
    let (w, h) = (flow.width, flow.height);
    let mut out = BitMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mag = flow.magnitude[i];
            if mag < min_speed {
                continue;
            }
            let abnormal = sets.hue_abnormal.contains(&hist.hue_bin(flow.hue[i]))
                || sets.mag_abnormal.contains(&hist.mag_bin(mag));
            if abnormal {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn polar(w: usize, h: usize, hue: f64, mag: f64) -> FlowPolar {
        FlowPolar {
            width: w,
            height: h,
            hue: vec![hue; w * h],
            magnitude: vec![mag; w * h],
        }
    }

    /// Brute-force tail oracle: try every prefix length of the sorted order
    /// and keep the longest one within budget.
    fn tail_oracle(bins: &[u64], tail_fraction: f64, total: u64) -> BTreeSet<usize> {
        let mut order: Vec<usize> = (0..bins.len()).collect();
        order.sort_by_key(|&i| (bins[i], i));
        let budget = tail_fraction * total as f64;
        let mut best: BTreeSet<usize> = BTreeSet::new();
        for take in 0..=order.len() {
            let cum: u64 = order[..take].iter().map(|&i| bins[i]).sum();
            if cum as f64 <= budget {
                best = order[..take].iter().copied().collect();
            }
        }
        best
    }

    #[test]
    fn static_scene_yields_empty_histogram() {
        let f = polar(10, 10, 0.0, 0.0);
        let hist = fit(&[f], 36, 32, 10.0, 0.5).unwrap();
        assert_eq!(hist.total, 0);
        assert!(tail(&hist, 0.05).is_err());
    }

    #[test]
    fn single_motion_occupies_one_bin_per_channel() {
        let f = polar(10, 10, 0.0, 1.0);
        let hist = fit(&[f], 36, 32, 10.0, 0.5).unwrap();
        assert_eq!(hist.total, 100);
        assert_eq!(hist.hue_bins.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(hist.mag_bins.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn bin_mass_splits_proportional_to_agent_areas() {
        // two "agents": 30 pixels at speed 1, 60 pixels at speed 2
        let mut f = polar(10, 9, 0.0, 0.0);
        for i in 0..30 {
            f.magnitude[i] = 1.0;
        }
        for i in 30..90 {
            f.magnitude[i] = 2.0;
        }
        let hist = fit(&[f], 36, 32, 10.0, 0.5).unwrap();
        assert_eq!(hist.total, 90);
        let b1 = hist.mag_bin(1.0);
        let b2 = hist.mag_bin(2.0);
        assert_eq!(hist.mag_bins[b1], 30);
        assert_eq!(hist.mag_bins[b2], 60);
    }

    #[test]
    fn worked_tail_example() {
        let hist = MotionHistogram {
            hue_bins: vec![50, 30, 15, 4, 1],
            mag_bins: vec![100, 0, 0, 0, 0],
            mag_ceiling: 10.0,
            total: 100,
        };
        let sets = tail(&hist, 0.05).unwrap();
        // 1 + 4 = 5 = 5% of 100: bins 4 and 3 are abnormal
        assert_eq!(sets.hue_abnormal, BTreeSet::from([3, 4]));
        assert_eq!(
            sets.hue_abnormal,
            tail_oracle(&hist.hue_bins, 0.05, 100),
        );
    }

    #[test]
    fn single_populated_bin_makes_all_others_abnormal() {
        let hist = MotionHistogram {
            hue_bins: vec![0, 0, 120, 0],
            mag_bins: vec![120, 0, 0, 0],
            mag_ceiling: 10.0,
            total: 120,
        };
        let sets = tail(&hist, 0.05).unwrap();
        assert_eq!(sets.hue_abnormal, BTreeSet::from([0, 1, 3]));
        assert_eq!(sets.mag_abnormal, BTreeSet::from([1, 2, 3]));
    }

    #[test]
    fn uniform_counts_take_exactly_the_tie_break_bin() {
        let hist = MotionHistogram {
            hue_bins: vec![7; 20],
            mag_bins: vec![140, 0, 0, 0],
            mag_ceiling: 10.0,
            total: 140,
        };
        let sets = tail(&hist, 0.05).unwrap();
        // one bin holds exactly 5% of the mass; ties break toward index 0
        assert_eq!(sets.hue_abnormal, BTreeSet::from([0]));
    }

    #[test]
    fn mask_is_empty_on_static_flow() {
        let f = polar(8, 8, 0.0, 0.0);
        let hist = MotionHistogram {
            hue_bins: vec![10; 36],
            mag_bins: vec![10; 32],
            mag_ceiling: 10.0,
            total: 360,
        };
        let sets = tail(&hist, 0.05).unwrap();
        let m = mask(&f, &sets, &hist, 0.5).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn unseen_top_speed_bin_is_flagged() {
        // training saw only slow motion; the test pixel is near-ceiling
        let slow = polar(10, 10, 0.1, 1.0);
        let hist = fit(&[slow], 36, 32, 10.0, 0.5).unwrap();
        let sets = tail(&hist, 0.05).unwrap();
        let mut probe = polar(4, 1, 0.1, 1.0);
        probe.magnitude[2] = 9.9; // unseen bin
        let m = mask(&probe, &sets, &hist, 0.5).unwrap();
        assert!(m.get(2, 0));
        assert!(!m.get(0, 0));
    }

    #[test]
    fn bin_count_mismatch_is_detected() {
        let f = polar(4, 4, 0.0, 1.0);
        let hist = fit(&[f.clone()], 8, 8, 10.0, 0.5).unwrap();
        let sets = AbnormalValueSet {
            hue_abnormal: BTreeSet::from([9]),
            mag_abnormal: BTreeSet::new(),
            tail_fraction: 0.05,
        };
        assert!(matches!(
            mask(&f, &sets, &hist, 0.5),
            Err(Error::BinCountMismatch { .. })
        ));
    }

    #[test]
    fn hue_wraparound_stays_in_range() {
        let hist = MotionHistogram {
            hue_bins: vec![0; 36],
            mag_bins: vec![0; 32],
            mag_ceiling: 10.0,
            total: 0,
        };
        assert_eq!(hist.hue_bin(TWO_PI.next_down()), 35);
        assert_eq!(hist.hue_bin(0.0), 0);
        assert_eq!(hist.mag_bin(25.0), 31); // overflow clamps to top bin
        assert_eq!(hist.mag_bin(10.0), 31);
    }

    proptest! {
        #[test]
        fn tail_matches_brute_force_oracle(
            counts in proptest::collection::vec(0u64..50, 2..24),
            frac_pct in 0u32..40
        ) {
            let total: u64 = counts.iter().sum();
            prop_assume!(total > 0);
            let hist = MotionHistogram {
                hue_bins: counts.clone(),
                mag_bins: counts.clone(),
                mag_ceiling: 10.0,
                total,
            };
            let frac = frac_pct as f64 / 100.0;
            let sets = tail(&hist, frac).unwrap();
            prop_assert_eq!(&sets.hue_abnormal, &tail_oracle(&counts, frac, total));

            // mass bound and maximality
            let mass: u64 = sets.hue_abnormal.iter().map(|&i| counts[i]).sum();
            prop_assert!(mass as f64 <= frac * total as f64);
            let mut order: Vec<usize> = (0..counts.len()).collect();
            order.sort_by_key(|&i| (counts[i], i));
            if sets.hue_abnormal.len() < counts.len() {
                let next = order[sets.hue_abnormal.len()];
                prop_assert!((mass + counts[next]) as f64 > frac * total as f64);
            }
        }

        #[test]
        fn growing_the_tail_never_shrinks_the_sets(
            counts in proptest::collection::vec(0u64..50, 2..24),
            lo_pct in 0u32..30,
            hi_pct in 0u32..30
        ) {
            let (lo, hi) = if lo_pct <= hi_pct { (lo_pct, hi_pct) } else { (hi_pct, lo_pct) };
            let total: u64 = counts.iter().sum();
            prop_assume!(total > 0);
            let hist = MotionHistogram {
                hue_bins: counts.clone(),
                mag_bins: counts,
                mag_ceiling: 10.0,
                total,
            };
            let small = tail(&hist, lo as f64 / 100.0).unwrap();
            let large = tail(&hist, hi as f64 / 100.0).unwrap();
            prop_assert!(small.hue_abnormal.is_subset(&large.hue_abnormal));
            prop_assert!(small.mag_abnormal.is_subset(&large.mag_abnormal));
        }

        #[test]
        fn every_flagged_pixel_is_in_an_abnormal_bin(
            hues in proptest::collection::vec(0.0f64..6.28, 36),
            mags in proptest::collection::vec(0.0f64..12.0, 36)
        ) {
            let flow = FlowPolar { width: 6, height: 6, hue: hues, magnitude: mags };
            let train = polar(12, 12, 1.0, 1.5);
            let hist = fit(&[train], 12, 8, 10.0, 0.5).unwrap();
            let sets = tail(&hist, 0.05).unwrap();
            let m = mask(&flow, &sets, &hist, 0.5).unwrap();
            for y in 0..6 {
                for x in 0..6 {
                    if m.get(x, y) {
                        let i = y * 6 + x;
                        let mag = flow.magnitude[i];
                        prop_assert!(mag >= 0.5);
                        prop_assert!(
                            sets.hue_abnormal.contains(&hist.hue_bin(flow.hue[i]))
                                || sets.mag_abnormal.contains(&hist.mag_bin(mag))
                        );
                    }
                }
            }
        }
    }
}

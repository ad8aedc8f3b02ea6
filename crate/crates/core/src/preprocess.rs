//! Frame preparation: histogram equalization, temporal-median background,
//! foreground masking, gated edge extraction and the three-channel
//! spatio-temporal stack `<I_t, I_{t-2}, I_{t-4}>`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::frame::FrameSequence;
use crate::image::{BitMask, GrayImage, ScalarImage};

/// Default absolute-difference threshold for foreground extraction.
pub const DEFAULT_TAU_FG: u8 = 25;

/// Edge map of one frame, gradient magnitudes normalized to `[0, 1]`.
pub type EdgeImage = ScalarImage;

/// Three edge images `<I_t, I_{t-2}, I_{t-4}>` for frame `t`.
///
/// Skipping every other frame makes object motion visible across the
/// channels; the stack exists only for `t >= 4` (0-indexed).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalStack {
    pub t: usize,
    /// Channel order is `[I_t, I_{t-2}, I_{t-4}]`.
    pub channels: [EdgeImage; 3],
}

impl SpatioTemporalStack {
    pub fn dimensions(&self) -> (usize, usize) {
        self.channels[0].dimensions()
    }
}

/// Standard cumulative-histogram remap. Constant images pass through
/// unchanged; the mapping is monotone in input intensity.
pub fn equalize(frame: &GrayImage) -> GrayImage {
    let mut hist = [0u64; 256];
    for &v in frame.as_slice() {
        hist[v as usize] += 1;
    }
    let total = frame.as_slice().len() as u64;
    let mut cdf = [0u64; 256];
    let mut acc = 0u64;
    for (i, &h) in hist.iter().enumerate() {
        acc += h;
        cdf[i] = acc;
    }
    let cdf_min = cdf
        .iter()
        .copied()
        .find(|&c| c > 0)
        .expect("image has pixels");
    if cdf_min == total {
        // single intensity level: remap is the identity
        return frame.clone();
    }
    let denom = (total - cdf_min) as f64;
    let mut lut = [0u8; 256];
    for (i, l) in lut.iter_mut().enumerate() {
        let num = cdf[i].saturating_sub(cdf_min) as f64;
        *l = (num / denom * 255.0).round() as u8;
    }
    GrayImage::from_fn(frame.width(), frame.height(), |x, y| {
        lut[frame.get(x, y) as usize]
    })
}

/// Per-pixel temporal median over the training frames (lower median for
/// even counts). With a fixed camera this is the empty-scene background.
pub fn background_model(train: &FrameSequence) -> Result<GrayImage> {
    if train.is_empty() {
        return Err(Error::EmptyInput("background training frames"));
    }
    let (w, h) = train.dimensions();
    let n = train.len();
    let mut out = GrayImage::new(w, h);
    let mut buf: Vec<u8> = vec![0; n];
    for y in 0..h {
        for x in 0..w {
            for (t, slot) in buf.iter_mut().enumerate() {
                *slot = train.frame(t).get(x, y);
            }
            let mid = (n - 1) / 2;
            let (_, median, _) = buf.select_nth_unstable(mid);
            out.set(x, y, *median);
        }
    }
    Ok(out)
}

/// Absolute-difference foreground test: a pixel is foreground iff
/// `|frame - bg| > tau_fg`.
pub fn foreground(frame: &GrayImage, bg: &GrayImage, tau_fg: u8) -> Result<BitMask> {
    if !frame.same_geometry(bg) {
        return Err(Error::GeometryMismatch {
            expected: frame.dimensions(),
            got: bg.dimensions(),
        });
    }
    Ok(BitMask::from_fn(frame.width(), frame.height(), |x, y| {
        frame.get(x, y).abs_diff(bg.get(x, y)) > tau_fg
    }))
}

/// Maximum possible Sobel response magnitude on 8-bit input:
/// `|gx| <= 4*255` per axis.
const SOBEL_NORM: f64 = 1020.0 * core::f64::consts::SQRT_2;

/// 3x3 Sobel gradient magnitude, zeroed outside the foreground mask and
/// normalized by the maximum possible operator response so values lie in
/// `[0, 1]`. The mask gates the output after gradient computation, so mask
/// boundaries do not create spurious edges. Borders use clamped-edge
/// extension.
pub fn edges(frame: &GrayImage, mask: &BitMask) -> Result<EdgeImage> {
    if frame.dimensions() != mask.dimensions() {
        return Err(Error::GeometryMismatch {
            expected: frame.dimensions(),
            got: mask.dimensions(),
        });
    }
    let (w, h) = frame.dimensions();
    let mut out = ScalarImage::new(w, h);
    let clamp = |v: isize, hi: usize| -> usize { v.clamp(0, hi as isize - 1) as usize };
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let px = |dx: isize, dy: isize| -> f64 {
                frame.get(clamp(x as isize + dx, w), clamp(y as isize + dy, h)) as f64
            };
            let gx = (px(1, -1) + 2.0 * px(1, 0) + px(1, 1))
                - (px(-1, -1) + 2.0 * px(-1, 0) + px(-1, 1));
            let gy = (px(-1, 1) + 2.0 * px(0, 1) + px(1, 1))
                - (px(-1, -1) + 2.0 * px(0, -1) + px(1, -1));
            out.set(x, y, (gx * gx + gy * gy).sqrt() / SOBEL_NORM);
        }
    }
    Ok(out)
}

/// Assembles the stack for frame `t` from per-frame edge images indexed by
/// frame number. Requires `t >= 4` and edge images at `t`, `t-2`, `t-4`.
pub fn stack(edge_images: &[EdgeImage], t: usize) -> Result<SpatioTemporalStack> {
    if t < 4 {
        return Err(Error::FrameIndex { t, needed: 4 });
    }
    if t >= edge_images.len() {
        return Err(Error::FrameIndex {
            t,
            needed: edge_images.len(),
        });
    }
    let cur = &edge_images[t];
    for past in [&edge_images[t - 2], &edge_images[t - 4]] {
        if past.dimensions() != cur.dimensions() {
            return Err(Error::GeometryMismatch {
                expected: cur.dimensions(),
                got: past.dimensions(),
            });
        }
    }
    Ok(SpatioTemporalStack {
        t,
        channels: [
            cur.clone(),
            edge_images[t - 2].clone(),
            edge_images[t - 4].clone(),
        ],
    })
}

//! Fixed-grid patch extraction from the spatio-temporal stack.
//!
//! Only grid cells with enough foreground are kept; empty cells carry no
//! appearance information and would only add noise to training.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::BitMask;
use crate::preprocess::SpatioTemporalStack;

pub const DEFAULT_PATCH_SIZE: usize = 32;
/// Non-overlapping grid at training time.
pub const DEFAULT_TRAIN_STRIDE: usize = 32;
/// Denser grid at test time for better localization.
pub const DEFAULT_TEST_STRIDE: usize = 16;
/// Minimum foreground fraction for a cell to be kept.
pub const DEFAULT_RHO_MIN: f64 = 0.05;

/// Square grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub patch_size: usize,
    pub stride: usize,
}

impl GridSpec {
    pub fn new(patch_size: usize, stride: usize) -> Result<Self> {
        if patch_size < 8 {
            return Err(Error::InvalidParam("patch_size must be >= 8"));
        }
        if stride == 0 || stride > patch_size {
            return Err(Error::InvalidParam("stride must lie in [1, patch_size]"));
        }
        Ok(Self { patch_size, stride })
    }

    /// Number of cells that fit fully inside a `width x height` frame.
    pub fn cell_count(&self, width: usize, height: usize) -> (usize, usize) {
        let nx = if width < self.patch_size {
            0
        } else {
            (width - self.patch_size) / self.stride + 1
        };
        let ny = if height < self.patch_size {
            0
        } else {
            (height - self.patch_size) / self.stride + 1
        };
        (nx, ny)
    }
}

/// One grid cell cut from a stack: 3 channels of `patch_size^2` values in
/// `[0, 1]`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub data: Vec<f64>,
    pub patch_size: usize,
    /// Top-left pixel of the cell in frame coordinates.
    pub origin: (usize, usize),
    /// Frame index the stack belongs to.
    pub t: usize,
    /// Fraction of foreground pixels in the cell.
    pub fg_ratio: f64,
}

/// Cuts every grid cell fully inside the frame whose foreground fraction is
/// at least `rho_min`, in row-major cell order. Cells that would extend
/// past the border are dropped rather than padded.
pub fn extract(
    stack: &SpatioTemporalStack,
    mask: &BitMask,
    grid: &GridSpec,
    rho_min: f64,
) -> Result<Vec<Patch>> {
    let (w, h) = stack.dimensions();
    if mask.dimensions() != (w, h) {
        return Err(Error::GeometryMismatch {
            expected: (w, h),
            got: mask.dimensions(),
        });
    }
    if !(0.0..=1.0).contains(&rho_min) {
        return Err(Error::InvalidParam("rho_min must lie in [0, 1]"));
    }
    let p = grid.patch_size;
    if p > w || p > h {
        return Err(Error::GridTooLarge {
            patch_size: p,
            frame: (w, h),
        });
    }

    let area = (p * p) as f64;
    let mut out = Vec::new();
    let mut oy = 0;
    while oy + p <= h {
        let mut ox = 0;
        while ox + p <= w {
            let mut fg = 0usize;
            for y in oy..oy + p {
                for x in ox..ox + p {
                    if mask.get(x, y) {
                        fg += 1;
                    }
                }
            }
            let fg_ratio = fg as f64 / area;
            if fg_ratio >= rho_min {
                let mut data = Vec::with_capacity(3 * p * p);
                for ch in &stack.channels {
                    for y in oy..oy + p {
                        for x in ox..ox + p {
                            data.push(ch.get(x, y));
                        }
                    }
                }
                out.push(Patch {
                    data,
                    patch_size: p,
                    origin: (ox, oy),
                    t: stack.t,
                    fg_ratio,
                });
            }
            ox += grid.stride;
        }
        oy += grid.stride;
    }
    Ok(out)
}

//! Frame sequences and ground-truth annotations.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{BitMask, GrayImage};

/// Ordered grayscale frames sharing one geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    id: String,
    width: usize,
    height: usize,
    frames: Vec<GrayImage>,
}

impl FrameSequence {
    /// Builds a sequence, enforcing that all frames share one geometry and
    /// that at least one frame is present.
    pub fn new(id: String, frames: Vec<GrayImage>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyInput("frame sequence"))?;
        let (width, height) = first.dimensions();
        for f in &frames {
            if f.dimensions() != (width, height) {
                return Err(Error::GeometryMismatch {
                    expected: (width, height),
                    got: f.dimensions(),
                });
            }
        }
        Ok(Self {
            id,
            width,
            height,
            frames,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &GrayImage {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }
}

/// Per-frame abnormality flags plus optional per-pixel localization masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    frame_flags: Vec<bool>,
    pixel_masks: Vec<Option<BitMask>>,
}

impl GroundTruth {
    /// Builds ground truth from flags and masks of equal length.
    ///
    /// A frame carrying a nonempty mask must be flagged abnormal.
    pub fn new(frame_flags: Vec<bool>, pixel_masks: Vec<Option<BitMask>>) -> Result<Self> {
        if frame_flags.len() != pixel_masks.len() {
            return Err(Error::AnnotationMismatch(alloc::format!(
                "{} flags vs {} masks",
                frame_flags.len(),
                pixel_masks.len()
            )));
        }
        for (t, (flag, mask)) in frame_flags.iter().zip(&pixel_masks).enumerate() {
            if let Some(m) = mask {
                if m.any() && !flag {
                    return Err(Error::AnnotationMismatch(alloc::format!(
                        "frame {t} has abnormal pixels but flag=false"
                    )));
                }
            }
        }
        Ok(Self {
            frame_flags,
            pixel_masks,
        })
    }

    /// Derives flags from masks alone: a frame is abnormal iff its mask has
    /// at least one set pixel.
    pub fn from_masks(masks: Vec<BitMask>) -> Self {
        let frame_flags = masks.iter().map(BitMask::any).collect();
        let pixel_masks = masks.into_iter().map(Some).collect();
        Self {
            frame_flags,
            pixel_masks,
        }
    }

    pub fn len(&self) -> usize {
        self.frame_flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_flags.is_empty()
    }

    pub fn flag(&self, t: usize) -> bool {
        self.frame_flags[t]
    }

    pub fn flags(&self) -> &[bool] {
        &self.frame_flags
    }

    pub fn mask(&self, t: usize) -> Option<&BitMask> {
        self.pixel_masks[t].as_ref()
    }

    /// Checks the annotation against a sequence: equal frame count and mask
    /// geometry matching the frames.
    pub fn validate_against(&self, seq: &FrameSequence) -> Result<()> {
        if self.len() != seq.len() {
            return Err(Error::AnnotationMismatch(alloc::format!(
                "{} annotated frames vs {} sequence frames",
                self.len(),
                seq.len()
            )));
        }
        for mask in self.pixel_masks.iter().flatten() {
            if mask.dimensions() != seq.dimensions() {
                return Err(Error::GeometryMismatch {
                    expected: seq.dimensions(),
                    got: mask.dimensions(),
                });
            }
        }
        Ok(())
    }
}

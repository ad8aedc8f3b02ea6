//! Core algorithms for abnormal event detection in fixed-camera video.
//!
//! The pipeline has two analysis paths that share a common front end:
//!
//! * an appearance-motion path that turns frames into equalized,
//!   foreground-gated edge images, stacks them into a three-channel
//!   spatio-temporal representation, cuts the stack into grid patches and
//!   scores each patch with an adversarially trained discriminator
//!   ([`preprocess`], [`patches`], [`advnet`]);
//! * a motion-only path that computes dense optical flow, converts it to
//!   direction/speed form and flags values falling in the low-frequency
//!   tail of histograms learned from normal footage ([`optflow`],
//!   [`motion`]).
//!
//! [`fuse`] merges both paths into per-pixel abnormality maps and per-frame
//! scores; [`eval`] computes frame-level and pixel-level ROC/AUC/EER over
//! them. [`synth`] renders deterministic synthetic scenes so the whole
//! pipeline can be exercised without real surveillance footage.
//!
//! The crate is `no_std` (with `alloc`); everything touching the filesystem
//! lives in the companion CLI crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod advnet;
pub mod error;
pub mod eval;
pub mod frame;
pub mod fuse;
pub mod image;
pub mod motion;
pub mod optflow;
pub mod patches;
pub mod preprocess;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use frame::{FrameSequence, GroundTruth};
pub use image::{BitMask, GrayImage, ScalarImage};

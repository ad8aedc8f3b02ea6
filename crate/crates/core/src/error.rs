//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Errors produced by the detection pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two images that must share geometry do not.
    GeometryMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// An operation that needs at least one frame/sample got none.
    EmptyInput(&'static str),
    /// Frame index out of the valid range for the requested operation.
    FrameIndex { t: usize, needed: usize },
    /// Grid patch does not fit inside the frame.
    GridTooLarge {
        patch_size: usize,
        frame: (usize, usize),
    },
    /// A parameter value violates its documented range.
    InvalidParam(&'static str),
    /// Histogram bin layouts disagree between a model and its inputs.
    BinCountMismatch { expected: usize, got: usize },
    /// Histogram has no observations, so no tail can be taken.
    EmptyHistogram,
    /// Tensor shape differs from what the network expects.
    ShapeMismatch {
        name: String,
        expected: alloc::vec::Vec<usize>,
        got: alloc::vec::Vec<usize>,
    },
    /// A named parameter tensor is absent.
    MissingParam(String),
    /// Training produced a non-finite loss.
    NonFiniteLoss { iteration: usize },
    /// ROC input does not contain both classes.
    SingleClass,
    /// Score and label lists differ in length.
    LengthMismatch { scores: usize, labels: usize },
    /// A ground-truth-abnormal frame has no pixel mask.
    MissingMask { frame: usize },
    /// Ground truth does not line up with the sequence it annotates.
    AnnotationMismatch(String),
    /// Scene description cannot be rendered.
    InvalidScene(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::GeometryMismatch { expected, got } => write!(
                f,
                "geometry mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::FrameIndex { t, needed } => {
                write!(f, "frame index {t} out of range (needs t >= {needed})")
            }
            Error::GridTooLarge { patch_size, frame } => write!(
                f,
                "patch size {patch_size} exceeds frame {}x{}",
                frame.0, frame.1
            ),
            Error::InvalidParam(what) => write!(f, "invalid parameter: {what}"),
            Error::BinCountMismatch { expected, got } => {
                write!(f, "bin count mismatch: expected {expected}, got {got}")
            }
            Error::EmptyHistogram => write!(f, "histogram has no observations"),
            Error::ShapeMismatch {
                name,
                expected,
                got,
            } => write!(
                f,
                "shape mismatch for '{name}': expected {expected:?}, got {got:?}"
            ),
            Error::MissingParam(name) => write!(f, "missing parameter tensor '{name}'"),
            Error::NonFiniteLoss { iteration } => {
                write!(f, "non-finite loss at iteration {iteration}")
            }
            Error::SingleClass => write!(f, "ROC needs both positive and negative samples"),
            Error::LengthMismatch { scores, labels } => {
                write!(f, "{scores} scores vs {labels} labels")
            }
            Error::MissingMask { frame } => {
                write!(f, "abnormal frame {frame} has no ground-truth mask")
            }
            Error::AnnotationMismatch(what) => write!(f, "annotation mismatch: {what}"),
            Error::InvalidScene(what) => write!(f, "invalid scene: {what}"),
        }
    }
}

impl core::error::Error for Error {}

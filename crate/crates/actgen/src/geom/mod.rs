//! Skeleton data model and the geometry toolbox around it: normalization,
//! per-limb similarity transforms, capsule rasterization, binary-mask
//! morphology and projective (perspective) transforms.
//!
//! Everything here is a pure function over value types; no shared state.

pub mod homography;
pub mod limbs;
pub mod morph;
pub mod raster;
pub mod skeleton;
pub mod warp;

pub use homography::{apply_homography, Homography};
pub use limbs::{Limb, LimbGroup, LimbSet};
pub use morph::{dilate, erode, BinaryMask};
pub use raster::{person_mask, rasterize_skeleton, ImageBuf};
pub use skeleton::{Joint, Skeleton, SkeletonSequence, JOINT_COUNT};
pub use warp::{limb_transform, warp_limb_patch, Affine2};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    NonPositiveDimensions { width: usize, height: usize },
    #[error("skeleton must have exactly {JOINT_COUNT} joints, got {0}")]
    WrongJointCount(usize),
    #[error("sequence must contain at least one frame")]
    EmptySequence,
    #[error("limb {limb} endpoint joint {joint} is not visible")]
    InvisibleJoint { limb: &'static str, joint: usize },
    #[error("limb {limb} has zero length in the source skeleton")]
    DegenerateLimb { limb: &'static str },
    #[error("homography matrix is singular (|det| = {det:.3e})")]
    SingularHomography { det: f64 },
    #[error("transformed point lies at infinity (|w| = {w:.3e})")]
    PointAtInfinity { w: f64 },
    #[error("linear system for the homography is rank-deficient")]
    UnsolvableHomography,
}

pub type Result<T, E = GeomError> = std::result::Result<T, E>;

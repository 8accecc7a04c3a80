//! Registration of the second photo onto the first.
//!
//! The static background is isolated by discarding large-flow pixels, a
//! homography is fitted robustly to the remaining flow correspondences, and
//! the second image, its disparity, and its backward flow are resampled into
//! the reference frame. A global scale and shift then brings the second
//! disparity map into agreement with the first. After this step both photos
//! share one camera.

mod correspondence;
mod disparity;
mod homography;
mod warp;

pub use correspondence::{correspondences_from_flow, static_mask, Correspondence, CorrespondenceSet};
pub use disparity::{fit_disparity_alignment, DisparityAlignment};
pub use homography::{estimate_homography, symmetric_transfer_error, Homography, RansacParams};
pub use warp::{reexpress_forward_flow, warp_to_reference, AlignedFrame};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("insufficient static support: {found} correspondences, need at least {needed}")]
    InsufficientSupport { found: usize, needed: usize },
    #[error("degenerate correspondence configuration: {0}")]
    Degenerate(&'static str),
    #[error("alignment failed: inlier ratio {ratio:.3} below {min_ratio:.3}")]
    AlignmentFailed { ratio: f64, min_ratio: f64 },
    #[error("homography is not invertible (|det| = {0:e})")]
    NotInvertible(f64),
    #[error("flow and mask dimensions differ: {flow:?} vs {mask:?}")]
    ShapeMismatch { flow: (usize, usize), mask: (usize, usize) },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

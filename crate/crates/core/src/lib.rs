//! Rib segmentation from CT volumes through sparse point clouds.
//!
//! Bone candidates are obtained by thresholding, sampled as point sets,
//! segmented by a set-abstraction network and mapped back to voxels. Per-rib
//! instances and centerlines are recovered by post-processing, and a synthetic
//! rib-cage phantom generator provides data with exact ground truth.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod centerline;
pub mod error;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod pointcloud;
pub mod postprocess;
pub mod rng;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};

/// Crate version recorded in every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

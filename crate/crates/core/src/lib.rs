//! Skeleton-pose guidance for pose-driven image animation.
//!
//! A pose sequence is split into two guidance signals: a motion field
//! (sparse Gaussian-splatted keypoint displacements plus a dense field
//! propagated over the reference image) and a keypoint correspondence map
//! carrying reference-image point embeddings along each trajectory. Both feed
//! a hybrid ControlNet whose residuals are added to a frozen denoiser.
//!
//! The neural side is a desk-scale stack (`guidance_net`) with its own small
//! reverse-mode autodiff, meant to verify structural invariants rather than to
//! generate video.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod correspondence;
mod error;
pub mod flow_sampling;
pub mod guidance_net;
pub mod motion_field;
pub mod pose_io;
pub mod trajectory;

pub use error::{Error, Result};

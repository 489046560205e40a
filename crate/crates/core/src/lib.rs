//! Geometric consistency regularization for relative pose regression.
//!
//! This crate holds the algorithmic core and is `no_std` (it needs `alloc`):
//!
//! - [`geometry`]: pinhole projection, poses, SO(3) recovery and angular errors.
//! - [`correspondence`]: grid-sampled 3D-2D correspondences formed from depth,
//!   and descriptor-pair embeddings.
//! - [`pnp`]: EPnP-style minimal solver with Gauss-Newton refinement.
//! - [`wransac`]: weighted RANSAC with prior-guided hypothesis scoring.
//! - [`fusion`]: the correspondence-weighting transformer.
//! - [`losses`]: pose, consistency and descriptor losses and their weighted sum.
//! - [`metrics`]: pose AUC and descriptor error maps.
//! - [`synth`]: planar ground-truth scenes with view-consistent descriptors.
//! - [`toytrain`]: a small finite-difference-trained pose regressor.
//!
//! File formats, the CLI and parallel drivers live in the companion `gcr` crate.
#![no_std]
// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod correspondence;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod pnp;
pub mod rng;
pub mod synth;
pub mod toytrain;
pub mod wransac;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Pixel, Point3, Pose, RotationMatrix};

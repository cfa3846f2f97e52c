//! Initialization-free structure-from-motion with a graph attention network.
//!
//! The crate takes sparse 2D point tracks to camera poses and 3D points:
//!
//! - [`scene`]: track data, JSON ingestion, coordinate normalization and a
//!   synthetic scene generator;
//! - [`diff`]: the reverse-mode differentiation substrate;
//! - [`gnn`]: the attention network over projection, view, scene-point and
//!   global features;
//! - [`objective`]: projection model and the training loss with its depth
//!   hinge;
//! - [`train`]: Adam, the learning-rate schedule, augmentation, outlier
//!   injection, the training loop and checkpoints;
//! - [`geometry`]: DLT triangulation, Huber bundle adjustment, similarity
//!   alignment and evaluation metrics.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diff;
pub mod camera;
pub mod scene;
pub mod recon;
pub mod gnn;
pub mod objective;
pub mod train;
pub mod geometry;

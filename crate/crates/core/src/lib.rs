//! Building blocks for an X-ray contraband detector pipeline.
//!
//! * [`geometry`]: boxes, conversions, IoU and clipping.
//! * [`postprocess`]: hard NMS and Soft-NMS (linear and Gaussian decay).
//! * [`metrics`]: matching, PR curves, F-beta, AP/mAP and FPS.
//! * [`augment`]: four-image mosaic composition with label remapping.
//! * [`attention`]: CBAM and shifted-window attention blocks with
//!   reverse-mode input gradients and finite-difference verification.
//! * [`io`]: label, detection, manifest, curve and PPM file formats.
//!
//! Batch entry points take an [`Execution`] so callers can pick the rayon
//! path or the sequential one. Without the `parallel` feature both run
//! sequentially.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod augment;
mod error;
mod exec;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod postprocess;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{BBox, ImageDims, NormalizedBox};
pub use metrics::GroundTruth;
pub use postprocess::Detection;

//! Sphere detection in calibrated images and 3-D center estimation from the
//! silhouette, given the sphere radius.

// Negated comparisons are used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circle_ransac;
pub mod edges;
pub mod ellipse_fit;
pub mod error;
pub mod geometry;
pub mod image;
pub mod pipeline;
pub mod sphere3d;
pub mod synth;
pub mod threshold;

pub use error::{Error, Result};

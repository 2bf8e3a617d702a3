//! Foreground segmentation of cabin-monitoring imagery with adaptive
//! Gaussian-mixture background subtraction and morphological snakes.
//!
//! Binary masks are `true` for foreground. Images are stored as 8-bit
//! samples; scalar fields carry `f64` values with a declared range.

// negated comparisons below are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod colorspace;
pub mod config;
pub mod error;
pub mod gmm;
pub mod imgcore;
pub mod metrics;
pub mod morphology;
pub mod pipeline;
pub mod snakes;
pub mod synth;

mod par;

pub use error::{Error, Result};

//! Spectral and time-multiplexed matting for LED-volume capture.
//!
//! Frames are linear RGB in `f64`. A typical pipeline calibrates crosstalk
//! from chart shots ([`calibration`]), keys each frame against a clean plate
//! ([`matting`]), restores the missing channel, and composites the
//! premultiplied element ([`compositing`]). [`multiplex`] and [`flow`] cover
//! alternating-lighting capture; [`synth`] renders scenes with known truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibration;
pub mod compositing;
pub mod error;
pub mod flow;
pub mod image;
pub mod matting;
pub mod multiplex;
pub mod synth;

pub use error::{Error, Result};

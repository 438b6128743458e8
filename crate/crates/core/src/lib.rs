//! Core library for `fogbridge`: a small multimodal 2D object detector that
//! fuses RGB with sparse lidar depth through per-pixel entropy gates, plus the
//! machinery to adapt it across synthetic weather domains (adversarial feature
//! alignment, self-supervised pretext tasks) and to evaluate the result with
//! KITTI-style average precision.
//!
//! Everything is built on a self-contained reverse-mode autodiff engine
//! ([`tensor`]); training runs in `f32`, gradient checks in `f64`.

#![forbid(unsafe_code)]

pub mod augment;
pub mod detector;
pub mod entropy;
pub mod error;
pub mod mdt;
pub mod objectives;
pub mod raster;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};

//! Geometry, losses, augmentation, decoding and evaluation for monocular
//! 6-DoF object pose estimation with a 9D + SVD rotation head.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod cli;
pub mod config;
pub mod decode;
pub mod diff;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod losses;
pub mod synthtrain;

pub use error::{Error, Result};

//! Shape-aware complementary-task learning for multi-organ segmentation.
//!
//! A U-Net style encoder-decoder is trained to predict a segmentation map
//! together with two auxiliary targets derived from the labels alone: a
//! per-organ normalized distance map and a binary organ contour map.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod format;
pub mod grid;
pub mod losses;
pub mod phantom;
pub mod report;
pub mod shape_targets;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, FormatError, Result};

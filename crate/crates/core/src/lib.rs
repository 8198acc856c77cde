//! Curriculum training for polarimetric SAR patch classification.
//!
//! Patch difficulty is scored from the Cloude–Pottier entropy / mean-alpha
//! decomposition of each pixel's coherency matrix, training patches are
//! ranked easy to hard, and a small convolutional classifier is fine-tuned on
//! accumulating prefixes of the ranked set.

pub mod classifier;
pub mod cli;
pub mod curriculum;
pub mod dcl;
pub mod experiment;
pub mod halpha;
pub mod io;
pub mod types;

pub use types::{CoherencyMatrix, Patch, PixelVector, SceneDataset, UNLABELED};

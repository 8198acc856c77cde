//! Scene synthesis, the `DCLS` scene file format, patch extraction and
//! train/validation/test splitting.

mod format;
mod patches;
mod synth;

pub use format::{load_scene, read_scene, save_scene, write_legend_csv, write_scene, SCENE_MAGIC, SCENE_VERSION};
pub use patches::{extract_centers, extract_patches, split_pools, PatchExtractionSpec, Splits};
pub use synth::{default_palette, generate_scene, ClassSpec, Layout, Region, SceneSpec};

use thiserror::Error;

use crate::types::TypeError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("class '{class}' has an invalid covariance: {reason}")]
    InvalidCovariance { class: String, reason: String },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("unsupported scene version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("scene {rows}x{cols} is smaller than patch size {patch}")]
    SceneTooSmall { rows: usize, cols: usize, patch: usize },
    #[error("class {class} has {available} samples, cannot appear in all {splits} splits")]
    InsufficientSamples { class: usize, available: usize, splits: usize },
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fixed display colors, cycled for more than eight classes.
pub const PALETTE_RGB: [[u8; 3]; 8] = [
    [0x1f, 0x77, 0xb4],
    [0xd6, 0x27, 0x28],
    [0x2c, 0xa0, 0x2c],
    [0xff, 0x7f, 0x0e],
    [0x94, 0x67, 0xbd],
    [0x8c, 0x56, 0x4b],
    [0xe3, 0x77, 0xc2],
    [0x17, 0xbe, 0xcf],
];

pub fn class_rgb_hex(class: usize) -> String {
    let [r, g, b] = PALETTE_RGB[class % PALETTE_RGB.len()];
    format!("#{r:02x}{g:02x}{b:02x}")
}

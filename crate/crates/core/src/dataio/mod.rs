//! Label masks, datasets, fold splits and synthetic data.

mod manifest;
mod palette;
mod raster;
pub mod synth;

pub use manifest::{make_folds, DatasetManifest, ManifestPair};
pub use palette::{decode_mask, encode_classes, encode_mask, ClassPalette, Rgb, UNKNOWN_COLOR};
pub use raster::{read_png, read_png_text, write_png, Raster};

pub use crate::image::{LabelImage, LabeledImage};

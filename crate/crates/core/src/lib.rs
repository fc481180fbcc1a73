//! Retina-like sequential attention segmentation.
//!
//! Subareas of an image are described by multi-resolution grids of per-cell
//! class pmfs ([`grid`]). A network learns to predict those grids
//! ([`predictor`]); a raster scanner moves the focus of attention with a step
//! driven by the prediction entropy ([`attention`]) and the overlapping
//! predictions are averaged into a per-pixel probability map ([`probmap`]).

pub mod attention;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod grid;
pub mod image;
pub mod metrics;
pub mod predictor;
pub mod probmap;

pub use error::{Error, Result};

use crate::attention::FixationPredictor;
use crate::error::{Error, Result};
use crate::grid::{GridPmf, RetinaGrid};
use crate::image::{Image, LabelImage};

use super::{Head, Model};

/// Perfect predictor: returns the encoded ground truth at each fixation.
#[derive(Debug, Clone)]
pub struct OraclePredictor<'a> {
    labels: &'a LabelImage,
    grid: RetinaGrid,
    classes: usize,
}

impl<'a> OraclePredictor<'a> {
    pub fn new(labels: &'a LabelImage, grid: RetinaGrid, classes: usize) -> Self {
        OraclePredictor { labels, grid, classes }
    }
}

impl FixationPredictor for OraclePredictor<'_> {
    fn grid(&self) -> &RetinaGrid {
        &self.grid
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn predict_at(&self, _image: &Image, x: usize, y: usize) -> Result<GridPmf> {
        self.grid.encode_window(self.labels, x, y, self.classes)
    }
}

/// Trained network driven over image subareas.
#[derive(Debug, Clone)]
pub struct ModelPredictor<'a> {
    model: &'a Model,
    grid: RetinaGrid,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(model: &'a Model) -> Result<Self> {
        if model.config.head != Head::Retina {
            return Err(Error::config("attention scanning needs a retina-grid model"));
        }
        let grid = RetinaGrid::new(model.config.input_size, model.config.level)?;
        Ok(ModelPredictor { model, grid })
    }
}

impl FixationPredictor for ModelPredictor<'_> {
    fn grid(&self) -> &RetinaGrid {
        &self.grid
    }

    fn classes(&self) -> usize {
        self.model.config.classes
    }

    fn predict_at(&self, image: &Image, x: usize, y: usize) -> Result<GridPmf> {
        if image.channels() != self.model.config.channels {
            return Err(Error::data(format!(
                "image has {} channels, model expects {}",
                image.channels(),
                self.model.config.channels
            )));
        }
        let mut patch = Vec::new();
        image.patch_into(x, y, self.grid.subarea_size(), &mut patch)?;
        self.model.predict(&patch)
    }
}

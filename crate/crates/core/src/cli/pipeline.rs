//! Training, segmentation and scoring steps shared by the commands.

use rayon::prelude::*;

use crate::attention::{scan_image, FixationPredictor, ScanTrace};
use crate::dataio::{ClassPalette, Raster};
use crate::error::{Error, Result};
use crate::grid::RetinaGrid;
use crate::image::{Image, LabelImage, LabeledImage};
use crate::metrics::{aggregate, score, ScoreReport};
use crate::predictor::{
    center_samples, retina_samples, sample_sites, train, EpochRecord, Head, Model, ModelPredictor, OraclePredictor,
    PatchCenterClassifier, TrainOutcome,
};
use crate::probmap::{ProbabilityMap, Segmentation, UNKNOWN_CLASS};

use super::config::RunConfig;

/// Trains a retina-grid or patch-center model on `data`.
///
/// Both heads draw the same patch sites from `config.seed`, so at equal
/// settings they see identical pixels for identical numbers of updates.
pub fn train_model(
    config: &RunConfig,
    head: Head,
    data: &[LabeledImage],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let pcfg = config.predictor_config(head)?;
    let grid = RetinaGrid::new(config.subarea_size, config.level)?;
    let sites = sample_sites(
        data,
        &grid,
        config.classes,
        config.patches_per_image,
        config.boundary_ratio,
        config.seed,
    )?;
    let samples = match head {
        Head::Retina => retina_samples(data, &sites, &grid, config.classes)?,
        Head::PatchCenter => center_samples(data, &sites, config.subarea_size, config.classes)?,
    };
    train(&pcfg, &samples, on_epoch)
}

/// Result of one attention scan.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub segmentation: Segmentation,
    pub trace: ScanTrace,
    pub map: ProbabilityMap,
}

pub fn scan_with<P: FixationPredictor>(image: &Image, predictor: &P, config: &RunConfig) -> Result<ScanResult> {
    let (trace, preds) = scan_image(image, predictor, &config.scan_params())?;
    let mut map = ProbabilityMap::new(image.width(), image.height(), config.classes);
    map.deposit_scan(&trace, predictor.grid(), &preds)?;
    Ok(ScanResult {
        segmentation: map.finalize(),
        trace,
        map,
    })
}

pub fn scan_model(image: &Image, model: &Model, config: &RunConfig) -> Result<ScanResult> {
    check_model(model, config)?;
    scan_with(image, &ModelPredictor::new(model)?, config)
}

pub fn scan_oracle(image: &Image, labels: &LabelImage, config: &RunConfig) -> Result<ScanResult> {
    let grid = RetinaGrid::new(config.subarea_size, config.level)?;
    scan_with(image, &OraclePredictor::new(labels, grid, config.classes), config)
}

/// The ways `evaluate` can produce a segmentation for a test image.
#[derive(Debug, Clone, Copy)]
pub enum Segmenter<'a> {
    Retina(&'a Model),
    Baseline(&'a Model),
    Oracle,
}

impl Segmenter<'_> {
    pub fn segment(&self, item: &LabeledImage, config: &RunConfig) -> Result<Segmentation> {
        match *self {
            Segmenter::Retina(m) => Ok(scan_model(&item.image, m, config)?.segmentation),
            Segmenter::Oracle => Ok(scan_oracle(&item.image, &item.labels, config)?.segmentation),
            Segmenter::Baseline(m) => {
                check_model(m, config)?;
                PatchCenterClassifier::new(m, config.baseline_stride, config.center_fill()?)?.segment(&item.image)
            }
        }
    }
}

/// Scores every test image in parallel and averages them into one report.
pub fn score_images(segmenter: Segmenter<'_>, test: &[LabeledImage], config: &RunConfig) -> Result<ScoreReport> {
    let reports = test
        .par_iter()
        .map(|item| score(&segmenter.segment(item, config)?, &item.labels, config.classes))
        .collect::<Result<Vec<_>>>()?;
    let mut r = aggregate(&reports)?;
    r.folds = 1;
    Ok(r)
}

fn check_model(model: &Model, config: &RunConfig) -> Result<()> {
    let m = &model.config;
    if m.input_size != config.subarea_size || m.classes != config.classes {
        return Err(Error::config(format!(
            "checkpoint is for d={} K={}, run configuration has d={} K={}",
            m.input_size, m.classes, config.subarea_size, config.classes
        )));
    }
    if m.head == Head::Retina && m.level != config.level {
        return Err(Error::config(format!(
            "checkpoint is for r={}, run configuration has r={}",
            m.level, config.level
        )));
    }
    Ok(())
}

/// Reads a color-coded segmentation back; colors outside the palette
/// become [`UNKNOWN_CLASS`].
pub fn decode_segmentation(raster: &Raster, palette: &ClassPalette) -> Result<Segmentation> {
    if raster.channels != 3 {
        return Err(Error::data("segmentations must be RGB"));
    }
    let n = raster.width * raster.height;
    let classes: Vec<u8> = (0..n)
        .map(|i| {
            let px = raster.pixel(i);
            palette
                .classes
                .iter()
                .position(|(_, c)| c[..] == px[..3])
                .map_or(UNKNOWN_CLASS, |k| k as u8)
        })
        .collect();
    let unknown = classes.iter().filter(|&&c| c == UNKNOWN_CLASS).count();
    Ok(Segmentation {
        width: raster.width,
        height: raster.height,
        classes,
        heat: vec![1; n],
        unknown,
    })
}

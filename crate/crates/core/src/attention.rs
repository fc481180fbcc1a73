//! Sequential attention scanning.
//!
//! The focus of attention starts in the top-left corner and moves right by a
//! step that shrinks with the average cell entropy of the prediction at the
//! current fixation, `d * exp(-H^2 / (2 sigma^2))`. Rows are `vertical_stride`
//! pixels apart; the last fixation of a row and the last row are clamped
//! flush with the image border.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridPmf, RetinaGrid};
use crate::image::Image;

/// Anything that can produce a grid prediction for the subarea at `(x, y)`.
pub trait FixationPredictor: Sync {
    fn grid(&self) -> &RetinaGrid;

    fn classes(&self) -> usize;

    fn predict_at(&self, image: &Image, x: usize, y: usize) -> Result<GridPmf>;
}

impl<P: FixationPredictor + ?Sized> FixationPredictor for &P {
    fn grid(&self) -> &RetinaGrid {
        (**self).grid()
    }

    fn classes(&self) -> usize {
        (**self).classes()
    }

    fn predict_at(&self, image: &Image, x: usize, y: usize) -> Result<GridPmf> {
        (**self).predict_at(image, x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanParams {
    pub subarea_size: usize,
    pub sigma: f64,
    pub vertical_stride: usize,
    pub min_step: usize,
    pub classes: usize,
}

impl ScanParams {
    pub const DEFAULT_SIGMA: f64 = 0.4;
    pub const DEFAULT_VERTICAL_STRIDE: usize = 10;

    pub fn new(subarea_size: usize, classes: usize) -> Self {
        ScanParams {
            subarea_size,
            sigma: Self::DEFAULT_SIGMA,
            vertical_stride: Self::DEFAULT_VERTICAL_STRIDE,
            min_step: 1,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.subarea_size == 0 {
            return Err(Error::config("subarea size must be positive"));
        }
        if self.min_step == 0 || self.min_step > self.subarea_size {
            return Err(Error::config(format!(
                "min_step must be in 1..={}, got {}",
                self.subarea_size, self.min_step
            )));
        }
        if self.vertical_stride == 0 {
            return Err(Error::config("vertical stride must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::config("at least two classes are required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixation {
    pub x: usize,
    pub y: usize,
    pub entropy: f64,
    pub step_taken: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanTrace {
    pub width: usize,
    pub height: usize,
    pub subarea_size: usize,
    pub rows: Vec<Vec<Fixation>>,
}

impl ScanTrace {
    pub fn fixations(&self) -> impl Iterator<Item = &Fixation> {
        self.rows.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }

    /// Line records `row x y H step`, preceded by `#` header lines.
    pub fn to_records(&self, header: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in header {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "# width={} height={} subarea={}", self.width, self.height, self.subarea_size);
        let _ = writeln!(out, "row\tx\ty\tH\tstep");
        for (r, row) in self.rows.iter().enumerate() {
            for f in row {
                let _ = writeln!(out, "{r}\t{}\t{}\t{:.17e}\t{}", f.x, f.y, f.entropy, f.step_taken);
            }
        }
        out
    }
}

/// Mean per-cell entropy (natural log) over the unmasked cells.
pub fn grid_entropy(prediction: &GridPmf) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..prediction.cells() {
        if prediction.is_masked(i) {
            continue;
        }
        n += 1;
        total += cell_entropy(prediction.pmf(i));
    }
    if n == 0 {
        return Err(Error::data("entropy undefined: every cell is masked"));
    }
    Ok(total / n as f64)
}

pub fn cell_entropy(pmf: &[f64]) -> f64 {
    let h: f64 = pmf
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Unrounded horizontal shift `d * exp(-H^2 / (2 sigma^2))`.
pub fn raw_step(entropy: f64, subarea_size: usize, sigma: f64) -> f64 {
    subarea_size as f64 * (-(entropy * entropy) / (2.0 * sigma * sigma)).exp()
}

/// Horizontal shift in whole pixels, clamped to `[min_step, d]`.
pub fn attention_step(entropy: f64, params: &ScanParams) -> usize {
    let raw = raw_step(entropy.max(0.0), params.subarea_size, params.sigma).round();
    (raw as usize).clamp(params.min_step, params.subarea_size)
}

/// Top edge of every scan row.
pub fn row_positions(height: usize, subarea_size: usize, vertical_stride: usize) -> Vec<usize> {
    let last = height - subarea_size;
    let mut ys: Vec<usize> = (0..=last).step_by(vertical_stride).collect();
    if *ys.last().unwrap() != last {
        ys.push(last);
    }
    ys
}

/// Scan one row starting at `x = 0`; results are in fixation order.
pub fn scan_row<P: FixationPredictor + ?Sized>(
    image: &Image,
    predictor: &P,
    params: &ScanParams,
    y: usize,
) -> Result<Vec<(Fixation, GridPmf)>> {
    let d = params.subarea_size;
    let last = image.width() - d;
    let mut out = Vec::new();
    let mut x = 0usize;
    loop {
        let pred = predictor.predict_at(image, x, y)?;
        // a fully masked oracle window has no defined entropy; treat it as certain
        let entropy = match grid_entropy(&pred) {
            Ok(h) => h,
            Err(_) if pred.unmasked_count() == 0 => 0.0,
            Err(e) => return Err(e),
        };
        let step = attention_step(entropy, params);
        out.push((
            Fixation {
                x,
                y,
                entropy,
                step_taken: step,
            },
            pred,
        ));
        if x == last {
            break;
        }
        x = (x + step).min(last);
    }
    Ok(out)
}

/// Complete raster scan. Rows run in parallel on the current rayon pool;
/// the result is ordered row by row and does not depend on the thread count.
pub fn scan_image<P: FixationPredictor + ?Sized>(
    image: &Image,
    predictor: &P,
    params: &ScanParams,
) -> Result<(ScanTrace, Vec<Vec<GridPmf>>)> {
    params.validate()?;
    check_compatible(image, predictor, params)?;
    let d = params.subarea_size;
    let ys = row_positions(image.height(), d, params.vertical_stride);
    let rows: Vec<Vec<(Fixation, GridPmf)>> = ys
        .par_iter()
        .map(|&y| scan_row(image, predictor, params, y))
        .collect::<Result<_>>()?;

    let mut trace_rows = Vec::with_capacity(rows.len());
    let mut preds = Vec::with_capacity(rows.len());
    for row in rows {
        let (f, p): (Vec<_>, Vec<_>) = row.into_iter().unzip();
        trace_rows.push(f);
        preds.push(p);
    }
    Ok((
        ScanTrace {
            width: image.width(),
            height: image.height(),
            subarea_size: d,
            rows: trace_rows,
        },
        preds,
    ))
}

fn check_compatible<P: FixationPredictor + ?Sized>(image: &Image, predictor: &P, params: &ScanParams) -> Result<()> {
    let d = params.subarea_size;
    if image.width() < d || image.height() < d {
        return Err(Error::data(format!(
            "image {}x{} is smaller than the {d}x{d} subarea",
            image.width(),
            image.height()
        )));
    }
    if predictor.grid().subarea_size() != d {
        return Err(Error::config(format!(
            "predictor subarea {} does not match scan subarea {d}",
            predictor.grid().subarea_size()
        )));
    }
    if predictor.classes() != params.classes {
        return Err(Error::config(format!(
            "predictor has {} classes, scan expects {}",
            predictor.classes(),
            params.classes
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_degenerate_and_uniform_grids() {
        let one_hot = GridPmf::one_hot(16, 3, 1);
        assert_eq!(grid_entropy(&one_hot).unwrap(), 0.0);
        let uniform = GridPmf::uniform(16, 3);
        assert!((grid_entropy(&uniform).unwrap() - 3f64.ln()).abs() < 1e-12);

        let mut half = GridPmf::uniform(16, 3);
        for i in 0..8 {
            half.pmf_mut(i).copy_from_slice(&[1.0, 0.0, 0.0]);
        }
        assert!((grid_entropy(&half).unwrap() - 3f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_ignores_masked_cells() {
        let mut g = GridPmf::one_hot(4, 3, 0);
        g.pmf_mut(3).copy_from_slice(&[1.0 / 3.0; 3]);
        g.set_masked(3, true);
        assert_eq!(grid_entropy(&g).unwrap(), 0.0);
        for i in 0..4 {
            g.set_masked(i, true);
        }
        assert!(grid_entropy(&g).is_err());
    }

    #[test]
    fn step_examples() {
        let mut p = ScanParams::new(192, 3);
        assert_eq!(attention_step(0.0, &p), 192);
        assert_eq!(attention_step(3f64.ln(), &p), 4);
        p.subarea_size = 128;
        assert_eq!(attention_step(0.4, &p), 78);
        // clamp
        p.min_step = 10;
        assert_eq!(attention_step(5.0, &p), 10);
    }

    #[test]
    fn row_positions_clamp_last_row() {
        let ys = row_positions(1200, 192, 10);
        assert_eq!(ys.len(), 102);
        assert_eq!(*ys.last().unwrap(), 1008);
        assert_eq!(row_positions(64, 64, 10), vec![0]);
        assert_eq!(row_positions(84, 64, 10), vec![0, 10, 20]);
    }

    #[test]
    fn params_validation() {
        let mut p = ScanParams::new(64, 3);
        assert!(p.validate().is_ok());
        p.sigma = 0.0;
        assert!(p.validate().is_err());
        p.sigma = 0.4;
        p.min_step = 65;
        assert!(p.validate().is_err());
        p.min_step = 1;
        p.vertical_stride = 0;
        assert!(p.validate().is_err());
    }
}

//! Per-pixel accumulation of overlapping cell pmfs.

use std::io::Write;

use crate::attention::{Fixation, ScanTrace};
use crate::error::{Error, Result};
use crate::grid::{argmax_lowest, GridPmf, RetinaGrid};

/// Class id given to pixels that no deposit reached.
pub const UNKNOWN_CLASS: u8 = u8::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    classes: usize,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl ProbabilityMap {
    pub fn new(width: usize, height: usize, classes: usize) -> Self {
        ProbabilityMap {
            width,
            height,
            classes,
            sums: vec![0.0; width * height * classes],
            counts: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Pixel-major `H*W*K` accumulator.
    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn sum_at(&self, x: usize, y: usize) -> &[f64] {
        let p = (y * self.width + x) * self.classes;
        &self.sums[p..p + self.classes]
    }

    /// Adds the prediction of the fixation at `(x, y)` to every covered pixel.
    /// Pixels under a masked cell receive nothing.
    pub fn deposit(&mut self, fixation: &Fixation, grid: &RetinaGrid, prediction: &GridPmf) -> Result<()> {
        let d = grid.subarea_size();
        let (x0, y0) = (fixation.x, fixation.y);
        if x0 + d > self.width || y0 + d > self.height {
            return Err(Error::data(format!(
                "fixation at ({x0}, {y0}) of size {d} exceeds {}x{} map",
                self.width, self.height
            )));
        }
        if prediction.cells() != grid.len() || prediction.classes() != self.classes {
            return Err(Error::data(format!(
                "prediction has {} cells x {} classes, expected {} x {}",
                prediction.cells(),
                prediction.classes(),
                grid.len(),
                self.classes
            )));
        }
        let k = self.classes;
        let map = grid.cell_map();
        for dy in 0..d {
            let row = (y0 + dy) * self.width + x0;
            for (dx, &cell) in map[dy * d..(dy + 1) * d].iter().enumerate() {
                let cell = usize::from(cell);
                if prediction.is_masked(cell) {
                    continue;
                }
                let p = row + dx;
                self.counts[p] += 1;
                let acc = &mut self.sums[p * k..(p + 1) * k];
                for (a, &v) in acc.iter_mut().zip(prediction.pmf(cell)) {
                    *a += v;
                }
            }
        }
        Ok(())
    }

    /// Deposits a whole scan, row by row in trace order.
    pub fn deposit_scan(&mut self, trace: &ScanTrace, grid: &RetinaGrid, predictions: &[Vec<GridPmf>]) -> Result<()> {
        if predictions.len() != trace.rows.len() {
            return Err(Error::data("prediction rows do not match trace rows"));
        }
        for (fixes, preds) in trace.rows.iter().zip(predictions) {
            if fixes.len() != preds.len() {
                return Err(Error::data("prediction count does not match fixation count"));
            }
            for (f, p) in fixes.iter().zip(preds) {
                self.deposit(f, grid, p)?;
            }
        }
        Ok(())
    }

    /// Averaged pmfs, `H*W*K`; uncovered pixels are all zero.
    pub fn averaged(&self) -> Vec<f64> {
        let k = self.classes;
        let mut out = self.sums.clone();
        for (p, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                let inv = 1.0 / f64::from(c);
                out[p * k..(p + 1) * k].iter_mut().for_each(|v| *v *= inv);
            }
        }
        out
    }

    /// Argmax of the accumulated sums; ties go to the lowest class index.
    pub fn finalize(&self) -> Segmentation {
        let k = self.classes;
        let mut classes = Vec::with_capacity(self.counts.len());
        let mut unknown = 0;
        for (p, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                unknown += 1;
                classes.push(UNKNOWN_CLASS);
            } else {
                classes.push(argmax_lowest(&self.sums[p * k..(p + 1) * k]) as u8);
            }
        }
        Segmentation {
            width: self.width,
            height: self.height,
            classes,
            heat: self.counts.clone(),
            unknown,
        }
    }

    /// Raw dump of the averaged map: a text header line
    /// `retseg-probmap v1 width=W height=H classes=K dtype=f64le layout=hwk`
    /// followed by the little-endian values.
    pub fn write_raw<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "retseg-probmap v1 width={} height={} classes={} dtype=f64le layout=hwk",
            self.width, self.height, self.classes
        )?;
        let avg = self.averaged();
        let mut bytes = Vec::with_capacity(avg.len() * 8);
        for v in avg {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<u8>,
    /// Overlap count per pixel.
    pub heat: Vec<u32>,
    /// Pixels left at [`UNKNOWN_CLASS`].
    pub unknown: usize,
}

impl Segmentation {
    #[inline]
    pub fn class_at(&self, x: usize, y: usize) -> u8 {
        self.classes[y * self.width + x]
    }

    /// Overlap counts rescaled linearly so that the maximum maps to 255.
    pub fn render_heatmap(&self) -> Vec<u8> {
        let max = self.heat.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return vec![0; self.heat.len()];
        }
        self.heat
            .iter()
            .map(|&c| ((f64::from(c) * 255.0 / f64::from(max)).round()) as u8)
            .collect()
    }
}

//! Retina-like multi-resolution grids.
//!
//! Level 1 is a 4x4 grid over the `d`x`d` subarea. Each further level
//! replaces the central 2x2 cells of the previous one with a 4x4 grid of
//! half-size cells, so a level-`r` grid has `16 + 12 (r - 1)` cells and the
//! innermost cells have side `d / (4 * 2^(r-1))`.
//!
//! Cells are ordered ring by ring from the outermost inwards, row-major
//! within a ring; the last "ring" is the innermost 2x2 block.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::LabelImage;

/// Highest level accepted by [`RetinaGrid::new`]; cell indices must fit in `u16`.
pub const MAX_LEVEL: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellRect {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

impl CellRect {
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.side && y >= self.y && y < self.y + self.side
    }

    pub fn area(&self) -> usize {
        self.side * self.side
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetinaGrid {
    level: u32,
    subarea_size: usize,
    cells: Vec<CellRect>,
    // d*d lookup: pixel -> cell index
    cell_map: Vec<u16>,
}

/// Number of cells of a level-`level` grid.
pub fn cell_count(level: u32) -> usize {
    16 + 12 * (level as usize).saturating_sub(1)
}

impl RetinaGrid {
    pub fn new(subarea_size: usize, level: u32) -> Result<Self> {
        if level == 0 || level > MAX_LEVEL {
            return Err(Error::config(format!(
                "resolution level must be in 1..={MAX_LEVEL}, got {level}"
            )));
        }
        let divisor = 4usize << (level - 1);
        if subarea_size == 0 || !subarea_size.is_multiple_of(divisor) {
            return Err(Error::config(format!(
                "subarea size {subarea_size} is not divisible by {divisor} (required for level {level})"
            )));
        }

        let mut cells = Vec::with_capacity(cell_count(level));
        let mut side = subarea_size / 4;
        let mut origin = 0usize;
        for lv in 1..=level {
            let ring = |row: usize, col: usize| row == 0 || row == 3 || col == 0 || col == 3;
            for row in 0..4 {
                for col in 0..4 {
                    if ring(row, col) {
                        cells.push(CellRect {
                            x: origin + col * side,
                            y: origin + row * side,
                            side,
                        });
                    }
                }
            }
            if lv == level {
                for row in 1..3 {
                    for col in 1..3 {
                        cells.push(CellRect {
                            x: origin + col * side,
                            y: origin + row * side,
                            side,
                        });
                    }
                }
            } else {
                origin += side;
                side /= 2;
            }
        }
        debug_assert_eq!(cells.len(), cell_count(level));

        let mut cell_map = vec![u16::MAX; subarea_size * subarea_size];
        for (i, c) in cells.iter().enumerate() {
            for y in c.y..c.y + c.side {
                let row = &mut cell_map[y * subarea_size + c.x..y * subarea_size + c.x + c.side];
                row.fill(i as u16);
            }
        }

        Ok(RetinaGrid {
            level,
            subarea_size,
            cells,
            cell_map,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn subarea_size(&self) -> usize {
        self.subarea_size
    }

    pub fn cells(&self) -> &[CellRect] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Side of the outer-ring cells, `d / 4`.
    pub fn coarse_side(&self) -> usize {
        self.subarea_size / 4
    }

    pub fn finest_side(&self) -> usize {
        self.subarea_size / (4 << (self.level - 1))
    }

    /// Row-major `d*d` table of covering cell indices.
    pub fn cell_map(&self) -> &[u16] {
        &self.cell_map
    }

    pub fn cell_of_pixel(&self, x: usize, y: usize) -> Result<usize> {
        if x >= self.subarea_size || y >= self.subarea_size {
            return Err(Error::data(format!(
                "pixel ({x}, {y}) outside {d}x{d} subarea",
                d = self.subarea_size
            )));
        }
        Ok(usize::from(self.cell_map[y * self.subarea_size + x]))
    }

    /// Text dump, one cell per line: `index x y side`.
    pub fn geometry_dump(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {} {}", c.x, c.y, c.side);
        }
        out
    }

    /// Per-cell class pmfs of the `d`x`d` label window at `(x0, y0)`.
    ///
    /// Ambiguous pixels are ignored; a cell with no unambiguous pixel is
    /// masked and carries a uniform placeholder.
    pub fn encode_window(&self, labels: &LabelImage, x0: usize, y0: usize, classes: usize) -> Result<GridPmf> {
        let d = self.subarea_size;
        if x0 + d > labels.width() || y0 + d > labels.height() {
            return Err(Error::data(format!(
                "window at ({x0}, {y0}) of size {d} exceeds {}x{} label image",
                labels.width(),
                labels.height()
            )));
        }
        let n = self.cells.len();
        let mut hist = vec![0u32; n * classes];
        let ids = labels.classes();
        let amb = labels.ambiguous();
        for y in 0..d {
            let src = (y0 + y) * labels.width() + x0;
            let map = &self.cell_map[y * d..(y + 1) * d];
            for (x, &cell) in map.iter().enumerate() {
                if amb[src + x] {
                    continue;
                }
                let k = usize::from(ids[src + x]);
                if k >= classes {
                    return Err(Error::data(format!(
                        "class id {k} at ({}, {}) is not below class count {classes}",
                        x0 + x,
                        y0 + y
                    )));
                }
                hist[usize::from(cell) * classes + k] += 1;
            }
        }

        let mut pmf = GridPmf::uniform(n, classes);
        for i in 0..n {
            let h = &hist[i * classes..(i + 1) * classes];
            let total: u32 = h.iter().sum();
            if total == 0 {
                pmf.masked[i] = true;
                continue;
            }
            let row = pmf.pmf_mut(i);
            for (p, &c) in row.iter_mut().zip(h) {
                *p = f64::from(c) / f64::from(total);
            }
        }
        Ok(pmf)
    }

    /// [`RetinaGrid::encode_window`] over a patch that is exactly `d`x`d`.
    pub fn encode_targets(&self, patch: &LabelImage, classes: usize) -> Result<GridPmf> {
        if patch.width() != self.subarea_size || patch.height() != self.subarea_size {
            return Err(Error::data(format!(
                "label patch is {}x{}, grid expects {d}x{d}",
                patch.width(),
                patch.height(),
                d = self.subarea_size
            )));
        }
        self.encode_window(patch, 0, 0, classes)
    }
}

/// Per-cell probability mass functions over `K` classes for one fixation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPmf {
    classes: usize,
    probs: Vec<f64>,
    masked: Vec<bool>,
}

impl GridPmf {
    pub fn uniform(cells: usize, classes: usize) -> Self {
        GridPmf {
            classes,
            probs: vec![1.0 / classes as f64; cells * classes],
            masked: vec![false; cells],
        }
    }

    pub fn from_parts(classes: usize, probs: Vec<f64>, masked: Vec<bool>) -> Result<Self> {
        if classes == 0 || probs.len() != masked.len() * classes {
            return Err(Error::data(format!(
                "{} probabilities do not form {} rows of {classes}",
                probs.len(),
                masked.len()
            )));
        }
        let mut probs = probs;
        for (i, row) in probs.chunks_exact_mut(classes).enumerate() {
            if masked[i] {
                row.fill(1.0 / classes as f64);
                continue;
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::data(format!("cell {i} is not a probability vector (sum {sum})")));
            }
        }
        Ok(GridPmf {
            classes,
            probs,
            masked,
        })
    }

    /// Every cell one-hot on `class`.
    pub fn one_hot(cells: usize, classes: usize, class: usize) -> Self {
        let mut g = GridPmf {
            classes,
            probs: vec![0.0; cells * classes],
            masked: vec![false; cells],
        };
        for i in 0..cells {
            g.probs[i * classes + class] = 1.0;
        }
        g
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cells(&self) -> usize {
        self.masked.len()
    }

    pub fn pmf(&self, cell: usize) -> &[f64] {
        &self.probs[cell * self.classes..(cell + 1) * self.classes]
    }

    pub fn pmf_mut(&mut self, cell: usize) -> &mut [f64] {
        &mut self.probs[cell * self.classes..(cell + 1) * self.classes]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn masked(&self) -> &[bool] {
        &self.masked
    }

    pub fn is_masked(&self, cell: usize) -> bool {
        self.masked[cell]
    }

    pub fn set_masked(&mut self, cell: usize, masked: bool) {
        self.masked[cell] = masked;
    }

    pub fn unmasked_count(&self) -> usize {
        self.masked.iter().filter(|m| !**m).count()
    }

    /// Index of the most probable class of `cell`, lowest index on ties.
    pub fn argmax(&self, cell: usize) -> usize {
        argmax_lowest(self.pmf(cell))
    }
}

pub(crate) fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in v.iter().enumerate().skip(1) {
        if p > v[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_one_at_128_is_sixteen_32px_cells() {
        let g = RetinaGrid::new(128, 1).unwrap();
        assert_eq!(g.len(), 16);
        assert!(g.cells().iter().all(|c| c.side == 32));
        // outer ring first, row-major; then the central 2x2
        assert_eq!(g.cells()[0], CellRect { x: 0, y: 0, side: 32 });
        assert_eq!(g.cells()[4], CellRect { x: 0, y: 32, side: 32 });
        assert_eq!(g.cells()[12], CellRect { x: 32, y: 32, side: 32 });
    }

    #[test]
    fn level_two_at_128() {
        let g = RetinaGrid::new(128, 2).unwrap();
        assert_eq!(g.len(), 28);
        assert_eq!(g.cells().iter().filter(|c| c.side == 32).count(), 12);
        assert_eq!(g.cells().iter().filter(|c| c.side == 16).count(), 16);
    }

    #[test]
    fn level_four_at_192() {
        let g = RetinaGrid::new(192, 4).unwrap();
        assert_eq!(g.len(), 52);
        assert_eq!(g.finest_side(), 6);
    }

    #[test]
    fn indivisible_size_is_rejected() {
        assert!(matches!(RetinaGrid::new(96, 5), Err(Error::Config(_))));
        assert!(RetinaGrid::new(96, 4).is_ok());
        assert!(RetinaGrid::new(128, 0).is_err());
        assert!(RetinaGrid::new(0, 1).is_err());
    }

    #[test]
    fn cell_of_pixel_corners_and_center() {
        let g = RetinaGrid::new(128, 1).unwrap();
        assert_eq!(g.cell_of_pixel(0, 0).unwrap(), 0);
        let g = RetinaGrid::new(128, 2).unwrap();
        let i = g.cell_of_pixel(64, 64).unwrap();
        assert_eq!(g.cells()[i].side, 16);
        assert!(g.cells()[i].contains(64, 64));
        assert!(g.cell_of_pixel(128, 0).is_err());
    }

    #[test]
    fn encode_pure_patch_is_one_hot() {
        let g = RetinaGrid::new(64, 2).unwrap();
        let labels = LabelImage::filled(64, 64, 0);
        let pmf = g.encode_targets(&labels, 3).unwrap();
        for i in 0..pmf.cells() {
            assert_eq!(pmf.pmf(i), &[1.0, 0.0, 0.0]);
            assert!(!pmf.is_masked(i));
        }
    }

    #[test]
    fn encode_fully_ambiguous_cell_is_masked() {
        let g = RetinaGrid::new(16, 1).unwrap();
        let mut labels = LabelImage::filled(16, 16, 1);
        for y in 0..4 {
            for x in 0..4 {
                labels.set_ambiguous(x, y, true);
            }
        }
        // half of cell 1 ambiguous: renormalised over the remaining pixels
        for y in 0..4 {
            for x in 4..6 {
                labels.set_ambiguous(x, y, true);
            }
            labels.set(6, y, 0);
        }
        let pmf = g.encode_targets(&labels, 2).unwrap();
        assert!(pmf.is_masked(0));
        assert!(!pmf.is_masked(1));
        assert_eq!(pmf.pmf(1), &[0.5, 0.5]);
    }

    #[test]
    fn encode_rejects_out_of_range_class() {
        let g = RetinaGrid::new(16, 1).unwrap();
        let labels = LabelImage::filled(16, 16, 3);
        assert!(matches!(g.encode_targets(&labels, 3), Err(Error::Data(_))));
    }

    #[test]
    fn encode_rejects_wrong_patch_size() {
        let g = RetinaGrid::new(16, 1).unwrap();
        let labels = LabelImage::filled(20, 16, 0);
        assert!(g.encode_targets(&labels, 2).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_lowest(&[0.5, 0.5, 0.0]), 0);
        assert_eq!(argmax_lowest(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn from_parts_rejects_non_pmf_rows() {
        assert!(GridPmf::from_parts(2, vec![0.6, 0.6], vec![false]).is_err());
        assert!(GridPmf::from_parts(2, vec![1.5, -0.5], vec![false]).is_err());
        assert!(GridPmf::from_parts(2, vec![f64::NAN, 1.0], vec![false]).is_err());
        assert!(GridPmf::from_parts(2, vec![1.0], vec![false]).is_err());
        // masked rows are replaced, whatever they held
        let g = GridPmf::from_parts(2, vec![9.0, 9.0, 0.25, 0.75], vec![true, false]).unwrap();
        assert_eq!(g.pmf(0), &[0.5, 0.5]);
    }
}

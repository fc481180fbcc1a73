//! Training patch selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::grid_entropy;
use crate::error::{Error, Result};
use crate::grid::{GridPmf, RetinaGrid};
use crate::image::LabeledImage;

use super::TrainingSample;

/// Top-left corner of a training subarea in image `image`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSite {
    pub image: usize,
    pub x: usize,
    pub y: usize,
}

const BOUNDARY_ATTEMPTS: usize = 64;

/// Draws `per_image` uniformly placed sites per image. With probability
/// `boundary_ratio` a draw is redrawn (up to a fixed number of attempts)
/// until its ground-truth grid has non-zero entropy.
pub fn sample_sites(
    data: &[LabeledImage],
    grid: &RetinaGrid,
    classes: usize,
    per_image: usize,
    boundary_ratio: f64,
    seed: u64,
) -> Result<Vec<PatchSite>> {
    if !(0.0..=1.0).contains(&boundary_ratio) {
        return Err(Error::config(format!(
            "boundary oversampling ratio must be in [0, 1], got {boundary_ratio}"
        )));
    }
    let d = grid.subarea_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sites = Vec::with_capacity(data.len() * per_image);
    for (idx, item) in data.iter().enumerate() {
        let (w, h) = (item.labels.width(), item.labels.height());
        if w < d || h < d || item.image.width() != w || item.image.height() != h {
            return Err(Error::data(format!(
                "training image {idx} is {w}x{h}; needs matching image/mask of at least {d}x{d}"
            )));
        }
        for _ in 0..per_image {
            let want_boundary = rng.random::<f64>() < boundary_ratio;
            let mut site = PatchSite {
                image: idx,
                x: rng.random_range(0..=w - d),
                y: rng.random_range(0..=h - d),
            };
            if want_boundary {
                for _ in 0..BOUNDARY_ATTEMPTS {
                    let t = grid.encode_window(&item.labels, site.x, site.y, classes)?;
                    if grid_entropy(&t).unwrap_or(0.0) > 0.0 {
                        break;
                    }
                    site.x = rng.random_range(0..=w - d);
                    site.y = rng.random_range(0..=h - d);
                }
            }
            sites.push(site);
        }
    }
    Ok(sites)
}

/// Samples with retina-grid targets.
pub fn retina_samples(
    data: &[LabeledImage],
    sites: &[PatchSite],
    grid: &RetinaGrid,
    classes: usize,
) -> Result<Vec<TrainingSample>> {
    let d = grid.subarea_size();
    sites
        .iter()
        .map(|s| {
            let item = &data[s.image];
            let mut patch = Vec::new();
            item.image.patch_into(s.x, s.y, d, &mut patch)?;
            let target = grid.encode_window(&item.labels, s.x, s.y, classes)?;
            Ok(TrainingSample { patch, target })
        })
        .collect()
}

/// Samples labelled with the class of the center pixel `(d/2, d/2)`;
/// an ambiguous center gives a masked target.
pub fn center_samples(
    data: &[LabeledImage],
    sites: &[PatchSite],
    subarea_size: usize,
    classes: usize,
) -> Result<Vec<TrainingSample>> {
    let d = subarea_size;
    sites
        .iter()
        .map(|s| {
            let item = &data[s.image];
            let mut patch = Vec::new();
            item.image.patch_into(s.x, s.y, d, &mut patch)?;
            let (cx, cy) = (s.x + d / 2, s.y + d / 2);
            let class = usize::from(item.labels.class_at(cx, cy));
            if class >= classes {
                return Err(Error::data(format!("class id {class} at ({cx}, {cy}) is not below {classes}")));
            }
            let mut target = GridPmf::one_hot(1, classes, class);
            if item.labels.is_ambiguous(cx, cy) {
                target = GridPmf::uniform(1, classes);
                target.set_masked(0, true);
            }
            Ok(TrainingSample { patch, target })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Image, LabelImage};

    fn split_image() -> LabeledImage {
        LabeledImage {
            image: Image::new(64, 64, 3),
            labels: LabelImage::from_fn(64, 64, |x, _| u8::from(x >= 40)),
        }
    }

    #[test]
    fn sites_lie_inside_and_are_seeded() {
        let grid = RetinaGrid::new(16, 1).unwrap();
        let data = vec![split_image()];
        let a = sample_sites(&data, &grid, 2, 50, 0.5, 9).unwrap();
        let b = sample_sites(&data, &grid, 2, 50, 0.5, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.x <= 48 && s.y <= 48));
    }

    #[test]
    fn full_boundary_ratio_picks_mixed_windows() {
        let grid = RetinaGrid::new(16, 1).unwrap();
        let data = vec![split_image()];
        let sites = sample_sites(&data, &grid, 2, 40, 1.0, 1).unwrap();
        let mixed = sites.iter().filter(|s| s.x > 24 && s.x < 40).count();
        assert_eq!(mixed, sites.len());
    }

    #[test]
    fn center_target_is_center_pixel_class() {
        let data = vec![split_image()];
        let sites = [PatchSite { image: 0, x: 32, y: 0 }, PatchSite { image: 0, x: 31, y: 0 }];
        let s = center_samples(&data, &sites, 16, 2).unwrap();
        // centers at x = 40 and x = 39
        assert_eq!(s[0].target.pmf(0), &[0.0, 1.0]);
        assert_eq!(s[1].target.pmf(0), &[1.0, 0.0]);
        assert_eq!(s[0].patch.len(), 3 * 16 * 16);
    }

    #[test]
    fn bad_ratio_is_a_config_error() {
        let grid = RetinaGrid::new(16, 1).unwrap();
        assert!(sample_sites(&[split_image()], &grid, 2, 1, 1.5, 0).is_err());
    }
}

//! Patch-center classification baseline: the network predicts only the class
//! of the center pixel, and inference slides the window over the image.

use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::argmax_lowest;
use crate::image::Image;
use crate::probmap::Segmentation;

use super::{Head, Model};

/// How pixels between window centers get a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterFill {
    /// The `stride x stride` block around each center takes its class.
    Block,
    /// Class pmfs are interpolated bilinearly between centers.
    Bilinear,
}

impl FromStr for CenterFill {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(CenterFill::Block),
            "bilinear" => Ok(CenterFill::Bilinear),
            _ => Err(Error::config(format!("unknown fill policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchCenterClassifier<'a> {
    pub model: &'a Model,
    pub stride: usize,
    pub fill: CenterFill,
}

impl<'a> PatchCenterClassifier<'a> {
    pub fn new(model: &'a Model, stride: usize, fill: CenterFill) -> Result<Self> {
        if model.config.head != Head::PatchCenter {
            return Err(Error::config("patch-center inference needs a patch-center model"));
        }
        if stride == 0 {
            return Err(Error::config("baseline stride must be positive"));
        }
        Ok(PatchCenterClassifier { model, stride, fill })
    }

    fn centers(&self, len: usize) -> Vec<usize> {
        (0..len.div_ceil(self.stride))
            .map(|j| (j * self.stride + self.stride / 2).min(len - 1))
            .collect()
    }

    /// Windows hanging over the border are mirror-padded, so every pixel can
    /// be a center. Heat is 1 everywhere.
    pub fn segment(&self, image: &Image) -> Result<Segmentation> {
        let cfg = &self.model.config;
        if image.channels() != cfg.channels {
            return Err(Error::data(format!(
                "image has {} channels, model expects {}",
                image.channels(),
                cfg.channels
            )));
        }
        let (w, h, k) = (image.width(), image.height(), cfg.classes);
        let d = cfg.input_size;
        let xs = self.centers(w);
        let ys = self.centers(h);
        let half = (d / 2) as isize;
        let nodes: Vec<Vec<f64>> = ys
            .par_iter()
            .map(|&cy| {
                let mut row = Vec::with_capacity(xs.len() * k);
                let mut patch = Vec::new();
                for &cx in &xs {
                    image.reflected_patch_into(cx as isize - half, cy as isize - half, d, &mut patch);
                    row.extend_from_slice(self.model.predict(&patch)?.pmf(0));
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;

        let mut classes = vec![0u8; w * h];
        match self.fill {
            CenterFill::Block => {
                for y in 0..h {
                    let row = &nodes[y / self.stride];
                    for x in 0..w {
                        let j = x / self.stride;
                        classes[y * w + x] = argmax_lowest(&row[j * k..(j + 1) * k]) as u8;
                    }
                }
            }
            CenterFill::Bilinear => {
                let mut pmf = vec![0.0; k];
                for y in 0..h {
                    let (j0, j1, ty) = bracket(&ys, y);
                    for x in 0..w {
                        let (i0, i1, tx) = bracket(&xs, x);
                        for (c, v) in pmf.iter_mut().enumerate() {
                            let top = nodes[j0][i0 * k + c] * (1.0 - tx) + nodes[j0][i1 * k + c] * tx;
                            let bot = nodes[j1][i0 * k + c] * (1.0 - tx) + nodes[j1][i1 * k + c] * tx;
                            *v = top * (1.0 - ty) + bot * ty;
                        }
                        classes[y * w + x] = argmax_lowest(&pmf) as u8;
                    }
                }
            }
        }
        Ok(Segmentation {
            width: w,
            height: h,
            classes,
            heat: vec![1; w * h],
            unknown: 0,
        })
    }
}

/// Neighbouring center indices around `p` and the interpolation weight.
fn bracket(centers: &[usize], p: usize) -> (usize, usize, f64) {
    let hi = centers.partition_point(|&c| c < p);
    if hi == 0 {
        return (0, 0, 0.0);
    }
    if hi == centers.len() {
        let last = centers.len() - 1;
        return (last, last, 0.0);
    }
    let (a, b) = (centers[hi - 1], centers[hi]);
    (hi - 1, hi, (p - a) as f64 / (b - a) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{parse_architecture, PredictorConfig};

    #[test]
    fn bracket_weights() {
        let c = [2, 6, 10];
        assert_eq!(bracket(&c, 0), (0, 0, 0.0));
        assert_eq!(bracket(&c, 2), (0, 0, 0.0));
        assert_eq!(bracket(&c, 4), (0, 1, 0.5));
        assert_eq!(bracket(&c, 11), (2, 2, 0.0));
    }

    #[test]
    fn segments_every_pixel() {
        let mut cfg = PredictorConfig::new(8, 1, 2);
        cfg.head = Head::PatchCenter;
        cfg.architecture = parse_architecture("c2,p,f4").unwrap();
        let model = Model::initialize(cfg).unwrap();
        let img = Image::new(13, 9, 3);
        for fill in [CenterFill::Block, CenterFill::Bilinear] {
            let seg = PatchCenterClassifier::new(&model, 4, fill).unwrap().segment(&img).unwrap();
            assert_eq!(seg.classes.len(), 13 * 9);
            assert!(seg.classes.iter().all(|&c| c < 2));
        }
    }

    #[test]
    fn retina_model_is_rejected() {
        let model = Model::initialize(PredictorConfig::new(16, 1, 2)).unwrap();
        assert!(PatchCenterClassifier::new(&model, 4, CenterFill::Block).is_err());
    }
}

//! Synthetic labelled images: smooth random class regions, each filled with
//! its own base color plus blurred noise.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{LabelImage, LabeledImage};

use super::manifest::{DatasetManifest, ManifestPair};
use super::palette::{encode_mask, ClassPalette};
use super::raster::{write_png, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Regions from the argmax of per-class smooth random fields.
    Blobs,
    /// Class 0 left of a wavy, roughly vertical boundary, class 1 right of it.
    TwoRegion,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Layout::Blobs),
            "two-region" => Ok(Layout::TwoRegion),
            _ => Err(Error::config(format!("unknown layout {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    /// Target pixel share of each class; uniform when empty.
    pub priors: Vec<f64>,
    pub layout: Layout,
    /// Lattice spacing of the random fields, in pixels.
    pub blob_scale: usize,
    /// Distance of the class base colors from mid-gray.
    pub contrast: f64,
    /// Standard deviation of the per-pixel noise before blurring.
    pub noise: f64,
    pub blur_radius: usize,
    /// Expected number of ambiguous discs per image.
    pub ambiguous_discs: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(count: usize, width: usize, height: usize, classes: usize, seed: u64) -> Self {
        SynthSpec {
            count,
            width,
            height,
            classes,
            priors: Vec::new(),
            layout: Layout::Blobs,
            blob_scale: 64,
            contrast: 0.12,
            noise: 0.25,
            blur_radius: 1,
            ambiguous_discs: 0.0,
            seed,
        }
    }

    pub fn priors(&self) -> Vec<f64> {
        if self.priors.is_empty() {
            vec![1.0 / self.classes as f64; self.classes]
        } else {
            let s: f64 = self.priors.iter().sum();
            self.priors.iter().map(|p| p / s).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("synthetic data needs at least two classes"));
        }
        if self.layout == Layout::TwoRegion && self.classes != 2 {
            return Err(Error::config("two-region layout has exactly two classes"));
        }
        if !self.priors.is_empty() && (self.priors.len() != self.classes || self.priors.iter().any(|&p| p <= 0.0)) {
            return Err(Error::config("priors must be positive, one per class"));
        }
        if self.width < 8 || self.height < 8 || self.blob_scale < 4 {
            return Err(Error::config("synthetic images must be at least 8x8 with blob scale >= 4"));
        }
        Ok(())
    }

    fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "count={}", self.count);
        let _ = writeln!(out, "width={}", self.width);
        let _ = writeln!(out, "height={}", self.height);
        let _ = writeln!(out, "classes={}", self.classes);
        let _ = writeln!(out, "priors={:?}", self.priors());
        let _ = writeln!(out, "layout={:?}", self.layout);
        let _ = writeln!(out, "blob_scale={}", self.blob_scale);
        let _ = writeln!(out, "contrast={}", self.contrast);
        let _ = writeln!(out, "noise={}", self.noise);
        let _ = writeln!(out, "blur_radius={}", self.blur_radius);
        let _ = writeln!(out, "ambiguous_discs={}", self.ambiguous_discs);
        out
    }
}

/// Base RGB color of class `k` of `classes`: hues evenly spread around gray.
pub fn class_color(k: usize, classes: usize, contrast: f64) -> [f64; 3] {
    let phase = TAU * k as f64 / classes as f64;
    [0, 1, 2].map(|c| (0.5 + contrast * (phase + TAU * c as f64 / 3.0).cos()).clamp(0.0, 1.0))
}

/// Smooth value noise on a lattice with `scale` pixel spacing.
struct ValueNoise {
    cols: usize,
    scale: f64,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(width: usize, height: usize, scale: usize, rng: &mut ChaCha8Rng) -> Self {
        let cols = width / scale + 2;
        let rows = height / scale + 2;
        ValueNoise {
            cols,
            scale: scale as f64,
            values: (0..cols * rows).map(|_| rng.random::<f64>()).collect(),
        }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        let fx = x as f64 / self.scale;
        let fy = y as f64 / self.scale;
        let (ix, iy) = (fx as usize, fy as usize);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (s(fx - ix as f64), s(fy - iy as f64));
        let v = |i: usize, j: usize| self.values[j * self.cols + i];
        let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
        let bot = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

fn blob_labels(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (w, h, k) = (spec.width, spec.height, spec.classes);
    let priors = spec.priors();
    let fields: Vec<ValueNoise> = (0..k).map(|_| ValueNoise::new(w, h, spec.blob_scale, rng)).collect();
    let values: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .flat_map(|(x, y)| fields.iter().map(move |f| f.at(x, y)))
        .collect();
    let label = |p: usize, bias: &[f64]| {
        let v = &values[p * k..(p + 1) * k];
        (0..k)
            .max_by(|&a, &b| (v[a] + bias[a]).total_cmp(&(v[b] + bias[b])).then(b.cmp(&a)))
            .unwrap()
    };
    // shift per-class offsets until the class shares approach the priors
    let mut bias = vec![0.0; k];
    for _ in 0..60 {
        let mut counts = vec![0usize; k];
        for p in (0..w * h).step_by(3) {
            counts[label(p, &bias)] += 1;
        }
        let total: usize = counts.iter().sum();
        for c in 0..k {
            bias[c] += 0.3 * (priors[c] - counts[c] as f64 / total as f64);
        }
    }
    (0..w * h).map(|p| label(p, &bias) as u8).collect()
}

fn two_region_labels(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (w, h) = (spec.width, spec.height);
    let center = w as f64 * rng.random_range(0.4..0.6);
    let amp = w as f64 * rng.random_range(0.02..0.08);
    let period = h as f64 * rng.random_range(0.5..1.5);
    let phase = rng.random_range(0.0..TAU);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let edge = center + amp * (TAU * y as f64 / period + phase).sin();
        out.extend((0..w).map(|x| u8::from(x as f64 >= edge)));
    }
    out
}

fn box_blur(plane: &mut [f64], w: usize, h: usize, r: usize) {
    if r == 0 {
        return;
    }
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (x.saturating_sub(r), (x + r).min(w - 1));
            let s: f64 = plane[y * w + a..=y * w + b].iter().sum();
            tmp[y * w + x] = s / (b - a + 1) as f64;
        }
    }
    for y in 0..h {
        let (a, b) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            let s: f64 = (a..=b).map(|yy| tmp[yy * w + x]).sum();
            plane[y * w + x] = s / (b - a + 1) as f64;
        }
    }
}

fn render(spec: &SynthSpec, labels: &[u8], rng: &mut ChaCha8Rng) -> Raster {
    let (w, h) = (spec.width, spec.height);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise");
    let colors: Vec<[f64; 3]> = (0..spec.classes)
        .map(|k| class_color(k, spec.classes, spec.contrast))
        .collect();
    let mut planes: Vec<Vec<f64>> = (0..3)
        .map(|c| labels.iter().map(|&l| colors[usize::from(l)][c]).collect())
        .collect();
    for plane in &mut planes {
        for v in plane.iter_mut() {
            *v += noise.sample(rng);
        }
        box_blur(plane, w, h, spec.blur_radius);
    }
    let mut data = Vec::with_capacity(w * h * 3);
    for p in 0..w * h {
        for plane in &planes {
            data.push((plane[p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Raster {
        width: w,
        height: h,
        channels: 3,
        data,
    }
}

fn ambiguous_mask(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let (w, h) = (spec.width, spec.height);
    let mut mask = vec![false; w * h];
    if spec.ambiguous_discs <= 0.0 {
        return mask;
    }
    let whole = spec.ambiguous_discs.floor() as usize;
    let n = whole + usize::from(rng.random::<f64>() < spec.ambiguous_discs.fract());
    for _ in 0..n {
        let cx = rng.random_range(0..w) as f64;
        let cy = rng.random_range(0..h) as f64;
        let r = rng.random_range(3.0..(w.min(h) as f64 / 10.0).max(4.0));
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    mask[y * w + x] = true;
                }
            }
        }
    }
    mask
}

/// Image `index` of the set, deterministic in `(spec.seed, index)`.
pub fn generate_one(spec: &SynthSpec, index: usize) -> Result<(Raster, LabelImage)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ index as u64);
    let classes = match spec.layout {
        Layout::Blobs => blob_labels(spec, &mut rng),
        Layout::TwoRegion => two_region_labels(spec, &mut rng),
    };
    let raster = render(spec, &classes, &mut rng);
    let ambiguous = ambiguous_mask(spec, &mut rng);
    let labels = LabelImage::new(spec.width, spec.height, classes, ambiguous)?;
    Ok((raster, labels))
}

/// The whole set in memory, exactly as it would decode from disk.
pub fn generate(spec: &SynthSpec) -> Result<Vec<LabeledImage>> {
    (0..spec.count)
        .map(|i| {
            let (raster, labels) = generate_one(spec, i)?;
            Ok(LabeledImage {
                image: raster.to_image()?,
                labels,
            })
        })
        .collect()
}

/// Writes `images/`, `masks/`, `manifest.txt` and `provenance.txt` under `out`.
pub fn write_dataset(spec: &SynthSpec, out: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let palette = ClassPalette::for_classes(spec.classes)?;
    for sub in ["images", "masks"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let text = spec.to_text();
    let meta = vec![("retseg.synth".to_string(), text.replace('\n', " ").trim().to_string())];
    let mut manifest = DatasetManifest::new(out, palette.clone());
    for i in 0..spec.count {
        let (raster, labels) = generate_one(spec, i)?;
        let name = format!("img_{i:03}.png");
        let img_rel = Path::new("images").join(&name);
        let mask_rel = Path::new("masks").join(&name);
        write_png(&out.join(&img_rel), &raster, &meta)?;
        write_png(&out.join(&mask_rel), &encode_mask(&labels, &palette), &meta)?;
        manifest.pairs.push(ManifestPair {
            image: img_rel,
            mask: mask_rel,
            fold: None,
        });
    }
    manifest.save(&out.join("manifest.txt"))?;
    let prov = out.join("provenance.txt");
    fs::write(&prov, format!("# retseg synthetic dataset\ngenerator_version={}\n{text}", env!("CARGO_PKG_VERSION")))
        .map_err(|e| Error::io(&prov, e))?;
    Ok(manifest)
}

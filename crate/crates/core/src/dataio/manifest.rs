//! Dataset manifest: a line-oriented text file.
//!
//! ```text
//! # comment
//! class Good 255 0 0
//! class Bad 0 255 0
//! class Background 0 0 255
//! ambiguous 255 105 180
//! tolerance 0
//! folds 5
//! pair 0 images/img_000.png masks/img_000.png
//! pair - images/img_001.png masks/img_001.png
//! ```
//!
//! `class` lines define the palette in class-id order (the default palette is
//! used when there are none). The second `pair` field is the fold index or
//! `-` when unassigned. Paths are relative to the manifest's directory and
//! may not contain whitespace.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::LabeledImage;

use super::palette::{decode_mask, ClassPalette};
use super::raster::read_png;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestPair {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub palette: ClassPalette,
    pub folds: usize,
    pub pairs: Vec<ManifestPair>,
}

fn parse_rgb(parts: &[&str], line_no: usize) -> Result<[u8; 3]> {
    if parts.len() != 3 {
        return Err(Error::data(format!("line {line_no}: expected three color components")));
    }
    let mut rgb = [0u8; 3];
    for (v, p) in rgb.iter_mut().zip(parts) {
        *v = p
            .parse()
            .map_err(|_| Error::data(format!("line {line_no}: bad color component {p:?}")))?;
    }
    Ok(rgb)
}

impl DatasetManifest {
    pub fn new(base_dir: impl Into<PathBuf>, palette: ClassPalette) -> Self {
        DatasetManifest {
            base_dir: base_dir.into(),
            palette,
            folds: 0,
            pairs: Vec::new(),
        }
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut m = DatasetManifest::new(base_dir, ClassPalette::default());
        let mut classes = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts[0] {
                "class" if parts.len() == 5 => classes.push((parts[1].to_string(), parse_rgb(&parts[2..], n)?)),
                "ambiguous" => m.palette.ambiguous = parse_rgb(&parts[1..], n)?,
                "tolerance" if parts.len() == 2 => {
                    m.palette.tolerance = parts[1]
                        .parse()
                        .map_err(|_| Error::data(format!("line {n}: bad tolerance")))?
                }
                "folds" if parts.len() == 2 => {
                    m.folds = parts[1]
                        .parse()
                        .map_err(|_| Error::data(format!("line {n}: bad fold count")))?
                }
                "pair" if parts.len() == 4 => {
                    let fold = match parts[1] {
                        "-" => None,
                        f => Some(
                            f.parse()
                                .map_err(|_| Error::data(format!("line {n}: bad fold index {f:?}")))?,
                        ),
                    };
                    m.pairs.push(ManifestPair {
                        image: parts[2].into(),
                        mask: parts[3].into(),
                        fold,
                    });
                }
                _ => return Err(Error::data(format!("line {n}: cannot parse {raw:?}"))),
            }
        }
        if !classes.is_empty() {
            m.palette.classes = classes;
        }
        m.palette.validate().map_err(|e| Error::data(e.to_string()))?;
        if let Some(p) = m.pairs.iter().find(|p| p.fold.is_some_and(|f| f >= m.folds)) {
            return Err(Error::data(format!(
                "pair {} has fold {} but manifest declares {} folds",
                p.image.display(),
                p.fold.unwrap(),
                m.folds
            )));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        DatasetManifest::parse(&text, base)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# retseg dataset manifest\n");
        for (name, c) in &self.palette.classes {
            let _ = writeln!(out, "class {name} {} {} {}", c[0], c[1], c[2]);
        }
        let a = self.palette.ambiguous;
        let _ = writeln!(out, "ambiguous {} {} {}", a[0], a[1], a[2]);
        let _ = writeln!(out, "tolerance {}", self.palette.tolerance);
        let _ = writeln!(out, "folds {}", self.folds);
        for p in &self.pairs {
            let fold = p.fold.map_or("-".to_string(), |f| f.to_string());
            let _ = writeln!(out, "pair {fold} {} {}", p.image.display(), p.mask.display());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical text, for run metadata.
    pub fn hash(&self) -> String {
        crate::predictor::checkpoint::hex(&Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn classes(&self) -> usize {
        self.palette.len()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_pair(&self, index: usize) -> Result<LabeledImage> {
        let pair = &self.pairs[index];
        let image = read_png(&self.resolve(&pair.image))?.to_image()?;
        let labels = decode_mask(&read_png(&self.resolve(&pair.mask))?, &self.palette)?;
        if image.width() != labels.width() || image.height() != labels.height() {
            return Err(Error::data(format!(
                "{} and its mask differ in size",
                pair.image.display()
            )));
        }
        Ok(LabeledImage { image, labels })
    }

    /// Indices `(train, test)` for one fold; `None` trains and tests on everything.
    pub fn split(&self, fold: Option<usize>) -> Result<(Vec<usize>, Vec<usize>)> {
        let all: Vec<usize> = (0..self.pairs.len()).collect();
        let Some(f) = fold else {
            return Ok((all.clone(), all));
        };
        if f >= self.folds {
            return Err(Error::config(format!("fold {f} requested, manifest has {} folds", self.folds)));
        }
        if self.pairs.iter().any(|p| p.fold.is_none()) {
            return Err(Error::data("manifest has pairs without fold assignment"));
        }
        Ok(all.into_iter().partition(|&i| self.pairs[i].fold != Some(f)))
    }
}

/// Deterministic shuffled partition into `k` folds whose sizes differ by at most one.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<DatasetManifest> {
    if k == 0 || k > manifest.pairs.len() {
        return Err(Error::config(format!(
            "fold count {k} invalid for {} images",
            manifest.pairs.len()
        )));
    }
    let mut order: Vec<usize> = (0..manifest.pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    out.folds = k;
    for (pos, &idx) in order.iter().enumerate() {
        out.pairs[idx].fold = Some(pos % k);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> DatasetManifest {
        let mut m = DatasetManifest::new("data", ClassPalette::default());
        for i in 0..n {
            m.pairs.push(ManifestPair {
                image: format!("images/{i:03}.png").into(),
                mask: format!("masks/{i:03}.png").into(),
                fold: None,
            });
        }
        m
    }

    #[test]
    fn fifty_nine_into_five() {
        let m = make_folds(&manifest(59), 5, 1).unwrap();
        let mut sizes = [0; 5];
        for p in &m.pairs {
            sizes[p.fold.unwrap()] += 1;
        }
        let mut sorted = sizes.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sorted, vec![12, 12, 12, 12, 11]);
        assert_eq!(make_folds(&manifest(59), 5, 1).unwrap(), m);
        assert_ne!(make_folds(&manifest(59), 5, 2).unwrap(), m);
    }

    #[test]
    fn invalid_fold_counts() {
        assert!(make_folds(&manifest(3), 4, 0).is_err());
        assert!(make_folds(&manifest(3), 0, 0).is_err());
    }

    #[test]
    fn split_partitions() {
        let m = make_folds(&manifest(10), 3, 4).unwrap();
        for f in 0..3 {
            let (train, test) = m.split(Some(f)).unwrap();
            assert_eq!(train.len() + test.len(), 10);
            assert!(test.iter().all(|i| m.pairs[*i].fold == Some(f)));
            assert!(train.iter().all(|i| m.pairs[*i].fold != Some(f)));
        }
        assert!(m.split(Some(3)).is_err());
        assert!(manifest(4).split(Some(0)).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut m = make_folds(&manifest(4), 2, 0).unwrap();
        m.palette.tolerance = 3;
        let back = DatasetManifest::parse(&m.to_text(), "data").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
    }

    #[test]
    fn parse_errors() {
        assert!(DatasetManifest::parse("pair x a b", ".").is_err());
        assert!(DatasetManifest::parse("folds 2\npair 2 a b", ".").is_err());
        assert!(DatasetManifest::parse("bogus", ".").is_err());
        assert!(DatasetManifest::parse("class A 1 2 3\nclass B 1 2 3", ".").is_err());
    }
}

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::image::LabelImage;

use super::raster::Raster;

pub type Rgb = [u8; 3];

/// Color written for pixels whose class has no palette entry.
pub const UNKNOWN_COLOR: Rgb = [0, 0, 0];

const EXTRA_COLORS: [(&str, Rgb); 7] = [
    ("Class3", [255, 255, 0]),
    ("Class4", [0, 255, 255]),
    ("Class5", [255, 128, 0]),
    ("Class6", [128, 0, 255]),
    ("Class7", [255, 255, 255]),
    ("Class8", [128, 128, 128]),
    ("Class9", [0, 128, 0]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPalette {
    pub classes: Vec<(String, Rgb)>,
    pub ambiguous: Rgb,
    /// Maximum per-channel deviation snapped onto a palette color.
    pub tolerance: u8,
}

impl Default for ClassPalette {
    /// Good red, Bad green, Background blue, ambiguous pink.
    fn default() -> Self {
        ClassPalette {
            classes: vec![
                ("Good".into(), [255, 0, 0]),
                ("Bad".into(), [0, 255, 0]),
                ("Background".into(), [0, 0, 255]),
            ],
            ambiguous: [255, 105, 180],
            tolerance: 0,
        }
    }
}

impl ClassPalette {
    /// The default palette truncated or extended to `k` classes.
    pub fn for_classes(k: usize) -> Result<Self> {
        let mut p = ClassPalette::default();
        if k > p.classes.len() + EXTRA_COLORS.len() {
            return Err(Error::config(format!("no default palette for {k} classes")));
        }
        p.classes.truncate(k);
        for &(name, rgb) in EXTRA_COLORS.iter().take(k.saturating_sub(3)) {
            p.classes.push((name.into(), rgb));
        }
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, rgb) in self
            .classes
            .iter()
            .map(|(_, c)| *c)
            .chain(std::iter::once(self.ambiguous))
            .enumerate()
        {
            if let Some(j) = seen.insert(rgb, i) {
                return Err(Error::config(format!("palette entries {j} and {i} share color {rgb:?}")));
            }
        }
        if self.classes.len() >= usize::from(u8::MAX) {
            return Err(Error::config("too many classes in palette"));
        }
        Ok(())
    }

    pub fn color_of(&self, class: u8) -> Rgb {
        self.classes.get(usize::from(class)).map_or(UNKNOWN_COLOR, |(_, c)| *c)
    }

    /// `Some(Some(k))` for class `k`, `Some(None)` for ambiguous, `None` when
    /// no entry lies within the tolerance.
    fn classify(&self, rgb: Rgb) -> Option<Option<u8>> {
        let dist = |c: Rgb| (0..3).map(|i| rgb[i].abs_diff(c[i])).max().unwrap();
        let mut best: Option<(u8, Option<u8>)> = None;
        for (k, (_, c)) in self.classes.iter().enumerate() {
            let dk = dist(*c);
            if dk <= self.tolerance && best.is_none_or(|(b, _)| dk < b) {
                best = Some((dk, Some(k as u8)));
            }
        }
        let da = dist(self.ambiguous);
        if da <= self.tolerance && best.is_none_or(|(b, _)| da < b) {
            best = Some((da, None));
        }
        best.map(|(_, v)| v)
    }
}

/// Color-coded mask to class ids and ambiguity flags.
pub fn decode_mask(mask: &Raster, palette: &ClassPalette) -> Result<LabelImage> {
    if mask.channels != 3 {
        return Err(Error::data(format!("label masks must be RGB, got {} channels", mask.channels)));
    }
    let n = mask.width * mask.height;
    let mut classes = vec![0u8; n];
    let mut ambiguous = vec![false; n];
    let mut cache: HashMap<Rgb, Option<Option<u8>>> = HashMap::new();
    let mut unknown: HashMap<Rgb, usize> = HashMap::new();
    for i in 0..n {
        let px = mask.pixel(i);
        let rgb = [px[0], px[1], px[2]];
        match *cache.entry(rgb).or_insert_with(|| palette.classify(rgb)) {
            Some(Some(k)) => classes[i] = k,
            Some(None) => ambiguous[i] = true,
            None => *unknown.entry(rgb).or_default() += 1,
        }
    }
    if !unknown.is_empty() {
        let mut list: Vec<(Rgb, usize)> = unknown.into_iter().collect();
        list.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let shown: Vec<String> = list
            .iter()
            .take(8)
            .map(|(c, n)| format!("({},{},{}) x{n}", c[0], c[1], c[2]))
            .collect();
        return Err(Error::data(format!(
            "{} mask colors are not in the palette: {}{}",
            list.len(),
            shown.join(", "),
            if list.len() > 8 { ", ..." } else { "" }
        )));
    }
    LabelImage::new(mask.width, mask.height, classes, ambiguous)
}

/// Class ids to a color-coded RGB raster.
pub fn encode_mask(labels: &LabelImage, palette: &ClassPalette) -> Raster {
    let mut data = Vec::with_capacity(labels.width() * labels.height() * 3);
    for (&c, &a) in labels.classes().iter().zip(labels.ambiguous()) {
        data.extend_from_slice(&if a { palette.ambiguous } else { palette.color_of(c) });
    }
    Raster {
        width: labels.width(),
        height: labels.height(),
        channels: 3,
        data,
    }
}

/// Class ids without an ambiguity mask, e.g. a finished segmentation.
pub fn encode_classes(width: usize, height: usize, classes: &[u8], palette: &ClassPalette) -> Raster {
    Raster {
        width,
        height,
        channels: 3,
        data: classes.iter().flat_map(|&c| palette.color_of(c)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(colors: &[Rgb], width: usize) -> Raster {
        Raster {
            width,
            height: colors.len() / width,
            channels: 3,
            data: colors.iter().flatten().copied().collect(),
        }
    }

    #[test]
    fn all_red_is_class_zero() {
        let p = ClassPalette::default();
        let l = decode_mask(&raster(&[[255, 0, 0]; 6], 3), &p).unwrap();
        assert!(l.classes().iter().all(|&c| c == 0));
        assert!(l.ambiguous().iter().all(|&a| !a));
    }

    #[test]
    fn pink_is_ambiguous_and_round_trips() {
        let p = ClassPalette::default();
        let px = [[255, 0, 0], [255, 105, 180], [0, 0, 255], [0, 255, 0]];
        let r = raster(&px, 2);
        let l = decode_mask(&r, &p).unwrap();
        assert_eq!(l.ambiguous(), &[false, true, false, false]);
        assert_eq!(l.classes()[2], 2);
        assert_eq!(encode_mask(&l, &p), r);
    }

    #[test]
    fn unknown_colors_are_listed() {
        let p = ClassPalette::default();
        let err = decode_mask(&raster(&[[1, 2, 3], [1, 2, 3], [255, 0, 0], [9, 9, 9]], 2), &p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(1,2,3) x2") && msg.contains("(9,9,9) x1"), "{msg}");
    }

    #[test]
    fn tolerance_snaps_near_colors() {
        let mut p = ClassPalette::default();
        let r = raster(&[[250, 3, 0], [252, 108, 178]], 2);
        assert!(decode_mask(&r, &p).is_err());
        p.tolerance = 6;
        let l = decode_mask(&r, &p).unwrap();
        assert_eq!(l.classes()[0], 0);
        assert!(l.ambiguous()[1]);
    }

    #[test]
    fn palettes_for_other_class_counts() {
        assert_eq!(ClassPalette::for_classes(2).unwrap().len(), 2);
        assert_eq!(ClassPalette::for_classes(6).unwrap().classes[5].1, [255, 128, 0]);
        assert!(ClassPalette::for_classes(40).is_err());
        let mut dup = ClassPalette::default();
        dup.ambiguous = [255, 0, 0];
        assert!(dup.validate().is_err());
    }
}

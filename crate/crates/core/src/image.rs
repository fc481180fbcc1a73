//! In-memory raster types shared by every stage of the pipeline.

use crate::error::{Error, Result};

/// Planar (channel-major) image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_planar(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::data(format!(
                "planar buffer has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from interleaved 8-bit samples.
    pub fn from_interleaved_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * channels {
            return Err(Error::data("interleaved buffer does not match dimensions"));
        }
        let plane = width * height;
        let mut data = vec![0.0f32; plane * channels];
        for (p, px) in bytes.chunks_exact(channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[c * plane + p] = f32::from(v) / 255.0;
            }
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn to_interleaved_u8(&self) -> Vec<u8> {
        let plane = self.width * self.height;
        let mut out = vec![0u8; plane * self.channels];
        for p in 0..plane {
            for c in 0..self.channels {
                let v = self.data[c * plane + p].clamp(0.0, 1.0);
                out[p * self.channels + c] = (v * 255.0).round() as u8;
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[channel * n..(channel + 1) * n]
    }

    #[inline]
    pub fn get(&self, channel: usize, x: usize, y: usize) -> f32 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    /// Copies the `size`x`size` window at `(x0, y0)` into `out` as a planar f64 tensor.
    pub fn patch_into(&self, x0: usize, y0: usize, size: usize, out: &mut Vec<f64>) -> Result<()> {
        if x0 + size > self.width || y0 + size > self.height {
            return Err(Error::data(format!(
                "patch at ({x0}, {y0}) of size {size} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        out.clear();
        out.reserve(self.channels * size * size);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in y0..y0 + size {
                let row = &plane[y * self.width + x0..y * self.width + x0 + size];
                out.extend(row.iter().map(|&v| f64::from(v)));
            }
        }
        Ok(())
    }

    /// Like [`Image::patch_into`], but the window may hang over the border;
    /// outside pixels are mirrored back in (`-1 -> 1`, `w -> w - 2`).
    pub fn reflected_patch_into(&self, x0: isize, y0: isize, size: usize, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(self.channels * size * size);
        let xs: Vec<usize> = (0..size as isize).map(|i| reflect(x0 + i, self.width)).collect();
        for c in 0..self.channels {
            let plane = self.plane(c);
            for j in 0..size as isize {
                let y = reflect(y0 + j, self.height);
                let row = &plane[y * self.width..(y + 1) * self.width];
                out.extend(xs.iter().map(|&x| f64::from(row[x])));
            }
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Per-pixel class ids with an ambiguity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    width: usize,
    height: usize,
    classes: Vec<u8>,
    ambiguous: Vec<bool>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize, classes: Vec<u8>, ambiguous: Vec<bool>) -> Result<Self> {
        if classes.len() != width * height || ambiguous.len() != width * height {
            return Err(Error::data("label buffers do not match dimensions"));
        }
        Ok(LabelImage {
            width,
            height,
            classes,
            ambiguous,
        })
    }

    /// Label image where every pixel is `class` and nothing is ambiguous.
    pub fn filled(width: usize, height: usize, class: u8) -> Self {
        LabelImage {
            width,
            height,
            classes: vec![class; width * height],
            ambiguous: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut classes = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                classes.push(f(x, y));
            }
        }
        LabelImage {
            width,
            height,
            classes,
            ambiguous: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn ambiguous(&self) -> &[bool] {
        &self.ambiguous
    }

    #[inline]
    pub fn class_at(&self, x: usize, y: usize) -> u8 {
        self.classes[y * self.width + x]
    }

    #[inline]
    pub fn is_ambiguous(&self, x: usize, y: usize) -> bool {
        self.ambiguous[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: u8) {
        self.classes[y * self.width + x] = class;
    }

    pub fn set_ambiguous(&mut self, x: usize, y: usize, flag: bool) {
        self.ambiguous[y * self.width + x] = flag;
    }

    /// Largest class id found on a non-ambiguous pixel.
    pub fn max_class(&self) -> Option<u8> {
        self.classes
            .iter()
            .zip(&self.ambiguous)
            .filter(|(_, &a)| !a)
            .map(|(&c, _)| c)
            .max()
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<LabelImage> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::data("crop window outside label image"));
        }
        let mut classes = Vec::with_capacity(width * height);
        let mut ambiguous = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let r = y * self.width;
            classes.extend_from_slice(&self.classes[r + x0..r + x0 + width]);
            ambiguous.extend_from_slice(&self.ambiguous[r + x0..r + x0 + width]);
        }
        Ok(LabelImage {
            width,
            height,
            classes,
            ambiguous,
        })
    }
}

/// An image together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub labels: LabelImage,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_mirrors_without_repeating_edge() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(0, 5), 0);
        assert_eq!(reflect(4, 5), 4);
        assert_eq!(reflect(12, 5), 4);
    }

    #[test]
    fn interleaved_round_trip() {
        let bytes: Vec<u8> = (0..2 * 3 * 3).map(|v| (v * 13) as u8).collect();
        let img = Image::from_interleaved_u8(2, 3, 3, &bytes).unwrap();
        assert_eq!(img.to_interleaved_u8(), bytes);
        assert!((img.get(1, 1, 0) - 52.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn patch_bounds_are_checked() {
        let img = Image::new(8, 8, 1);
        let mut buf = Vec::new();
        assert!(img.patch_into(4, 4, 4, &mut buf).is_ok());
        assert_eq!(buf.len(), 16);
        assert!(img.patch_into(5, 4, 4, &mut buf).is_err());
    }
}

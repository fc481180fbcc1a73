//! Lossless 8-bit PNG input and output.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Interleaved 8-bit raster with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn pixel(&self, i: usize) -> &[u8] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn to_image(&self) -> Result<Image> {
        Image::from_interleaved_u8(self.width, self.height, self.channels, &self.data)
    }

    pub fn from_image(image: &Image) -> Result<Self> {
        if image.channels() != 1 && image.channels() != 3 {
            return Err(Error::data(format!(
                "only 1- or 3-channel images can be written, got {}",
                image.channels()
            )));
        }
        Ok(Raster {
            width: image.width(),
            height: image.height(),
            channels: image.channels(),
            data: image.to_interleaved_u8(),
        })
    }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::data(format!("{}: {e}", path.display()))
}

/// Reads a PNG, expanding palettes and dropping alpha and 16-bit precision.
pub fn read_png(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, data) = match info.color_type {
        png::ColorType::Grayscale => (1, buf),
        png::ColorType::Rgb => (3, buf),
        png::ColorType::GrayscaleAlpha => (1, buf.chunks_exact(2).map(|p| p[0]).collect()),
        png::ColorType::Rgba => (3, buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()),
        png::ColorType::Indexed => return Err(png_err(path, "unexpanded palette image")),
    };
    Ok(Raster {
        width: w,
        height: h,
        channels,
        data,
    })
}

/// Writes a PNG with `text` stored as tEXt chunks.
pub fn write_png(path: &Path, raster: &Raster, text: &[(String, String)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), raster.width as u32, raster.height as u32);
    encoder.set_color(match raster.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::data(format!("cannot write {c}-channel PNG"))),
    });
    encoder.set_depth(png::BitDepth::Eight);
    for (k, v) in text {
        encoder
            .add_text_chunk(k.clone(), v.clone())
            .map_err(|e| png_err(path, e))?;
    }
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(&raster.data).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// tEXt chunks of a PNG, in file order.
pub fn read_png_text(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect())
}

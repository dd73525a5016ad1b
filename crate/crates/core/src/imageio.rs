//! Minimal 8-bit PNG reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit image with interleaved channels (1 = gray, 3 = RGB).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    /// Luma of pixel `i` (first channel for gray, Rec.601 weights for RGB).
    fn luma(&self, i: usize) -> u8 {
        let p = &self.data[i * self.channels..(i + 1) * self.channels];
        match self.channels {
            1 | 2 => p[0],
            _ => {
                let y = 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32;
                y.round().clamp(0.0, 255.0) as u8
            }
        }
    }

    pub fn to_gray(&self) -> Vec<u8> {
        (0..self.height * self.width).map(|i| self.luma(i)).collect()
    }
}

fn image_err(path: &Path, message: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub fn read_png(path: &Path) -> Result<Image8> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(image_err(path, "unexpanded palette image")),
    };
    let (height, width) = (info.height as usize, info.width as usize);
    let mut data = Vec::with_capacity(height * width * channels);
    for row in buf.chunks(info.line_size).take(height) {
        data.extend_from_slice(&row[..width * channels]);
    }
    Ok(Image8 {
        height,
        width,
        channels,
        data,
    })
}

/// Reads only the header to obtain `(height, width)`.
pub fn png_dimensions(path: &Path) -> Result<(usize, usize)> {
    let file = File::open(path).map_err(Error::io(path))?;
    let reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| image_err(path, e))?;
    let info = reader.info();
    Ok((info.height as usize, info.width as usize))
}

pub fn write_png(path: &Path, image: &Image8) -> Result<()> {
    let color = match image.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        n => return Err(image_err(path, format!("unsupported channel count {n}"))),
    };
    assert_eq!(image.data.len(), image.height * image.width * image.channels);
    let file = File::create(path).map_err(Error::io(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| image_err(path, e))?;
    writer
        .write_image_data(&image.data)
        .map_err(|e| image_err(path, e))?;
    writer.finish().map_err(|e| image_err(path, e))
}

//! RGB images and binary masks, stored as 8-bit PNG.

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Planar (CHW) RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageData {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

/// Single-channel label map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskData {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl ImageData {
    pub const CHANNELS: usize = 3;

    pub fn zeros(height: usize, width: usize) -> Self {
        ImageData { height, width, pixels: vec![0.0; Self::CHANNELS * height * width] }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = ImageData::zeros(h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.pixels[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
            }
        }
        Ok(out)
    }

    /// Quantizes to 8 bits (`round(v·255)`, clamped).
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            for c in 0..3 {
                let v = self.get(c, y as usize, x as usize);
                px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        img.save(path).map_err(|e| image_err(path, e))
    }
}

impl MaskData {
    pub fn zeros(height: usize, width: usize) -> Self {
        MaskData { height, width, labels: vec![0; height * width] }
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v != 0).count()
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = open(path)?.to_luma8();
        Ok(MaskData { height: img.height() as usize, width: img.width() as usize, labels: img.into_raw() })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .ok_or_else(|| Error::ShapeMismatch("mask buffer does not match its dimensions".into()))?;
        img.save(path).map_err(|e| image_err(path, e))
    }

    /// First label outside `{0, 1}`, if any.
    pub fn non_binary_value(&self) -> Option<u8> {
        self.labels.iter().copied().find(|&v| v > 1)
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|e| image_err(path, e))
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode { path: path.to_path_buf(), message: other.to_string() },
    }
}

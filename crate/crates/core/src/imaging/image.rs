use std::path::Path;

use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An 8-bit grayscale section image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionImage {
    pub section_id: String,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    /// Micrometers per pixel, when known.
    pub resolution: Option<f64>,
}

impl SectionImage {
    pub fn new(section_id: impl Into<String>, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            section_id: section_id.into(),
            width,
            height,
            pixels,
            resolution: None,
        })
    }

    pub fn filled(section_id: impl Into<String>, width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(section_id, width, height, vec![value; width * height])
    }

    pub fn with_resolution(mut self, um_per_px: f64) -> Self {
        self.resolution = Some(um_per_px);
        self
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.pixels[row * self.width + col] = v;
    }

    /// Intensity-inverted copy (255 - v).
    pub fn inverted(&self) -> Self {
        let mut out = self.clone();
        out.pixels.iter_mut().for_each(|p| *p = 255 - *p);
        out
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("pixel buffer matches dimensions")
    }

    /// Reads a PNG or PGM file; the section id defaults to the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (w, h) = img.dimensions();
        Self::new(id, w as usize, h as usize, img.into_raw())
    }

    /// Writes PNG or PGM depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") | Some("pnm") => ImageFormat::Pnm,
            Some("png") => ImageFormat::Png,
            other => {
                return Err(Error::format(
                    path,
                    format!("unsupported image extension {other:?}"),
                ))
            }
        };
        if format == ImageFormat::Pnm {
            // image's pnm encoder picks the subtype from the color type; force binary PGM.
            let mut buf = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
            buf.extend_from_slice(&self.pixels);
            std::fs::write(path, buf)?;
            return Ok(());
        }
        self.to_gray_image().save_with_format(path, format)?;
        Ok(())
    }
}

/// One boolean per pixel, `true` = foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn to_image(&self, section_id: &str) -> SectionImage {
        SectionImage {
            section_id: section_id.to_string(),
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
            resolution: None,
        }
    }
}

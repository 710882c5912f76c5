//! Single-channel float images and their on-disk encodings.
//!
//! Two formats are supported:
//!
//! * 8-bit grayscale PNG. Values are clamped to `[0, 1]`, scaled by 255 and
//!   rounded half-to-even.
//! * `UGSI` raw floats: the magic `b"UGSI"`, width and height as little-endian
//!   `u32`, then `width * height` little-endian `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const UGSI_MAGIC: &[u8; 4] = b"UGSI";

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major samples.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidConfig(format!(
                "image buffer has {} samples, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn clamped(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Linearly rescales to `[0, 1]` using the image's own range; a flat
    /// image maps to zeros.
    pub fn normalized(&self) -> Image {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
                .collect(),
        }
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(
            BufWriter::new(file),
            self.width as u32,
            self.height as u32,
        );
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| Error::Png {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut writer = encoder.write_header().map_err(png_err)?;
        writer.write_image_data(&to_u8(&self.data)).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }

    /// Decodes a PNG to `[0, 1]` grayscale. Colour images are reduced to
    /// Rec. 601 luma.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let png_err = |reason: String| Error::Png {
            path: path.to_path_buf(),
            reason,
        };
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| png_err(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| png_err(e.to_string()))?;
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            other => return Err(png_err(format!("unsupported colour type {other:?}"))),
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = &buf[y * info.line_size..];
            for x in 0..w {
                let px = &row[x * channels..];
                let v = if channels >= 3 {
                    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
                } else {
                    px[0] as f64
                };
                data.push(v / 255.0);
            }
        }
        Image::from_vec(w, h, data)
    }

    pub fn write_ugsi(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(12 + 4 * self.data.len());
        bytes.extend_from_slice(UGSI_MAGIC);
        bytes.extend_from_slice(&(self.width as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.height as u32).to_le_bytes());
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_ugsi(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                needed: 12,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != UGSI_MAGIC {
            return Err(Error::Header {
                path: path.to_path_buf(),
                reason: "missing UGSI magic".into(),
            });
        }
        let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let needed = 12 + 4 * w * h;
        if bytes.len() < needed {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                needed,
                found: bytes.len(),
            });
        }
        let data = bytes[12..needed]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Image::from_vec(w, h, data)
    }

    /// Dispatches on extension: `.ugsi` is raw float, anything else PNG.
    pub fn read_any(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("ugsi") => Image::read_ugsi(path),
            _ => Image::read_png(path),
        }
    }
}

/// Clamp to `[0, 1]`, scale by 255, round half to even.
pub fn to_u8(data: &[f64]) -> Vec<u8> {
    data.iter()
        .map(|&v| {
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            (v * 255.0).round_ties_even() as u8
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_to_even() {
        // 0.5/255 and 1.5/255 sit exactly on the half boundaries.
        let q = to_u8(&[0.0, 0.5 / 255.0, 1.5 / 255.0, 2.5 / 255.0, 1.2, -0.3]);
        assert_eq!(q, vec![0, 0, 2, 2, 255, 0]);
    }

    #[test]
    fn ugsi_roundtrip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(9, 8, |x, y| (x * 8 + y) as f64 / 100.0);
        let p = dir.path().join("a.ugsi");
        img.write_ugsi(&p).unwrap();
        let back = Image::read_ugsi(&p).unwrap();
        assert_eq!(back.dims(), (9, 8));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert_eq!(*a as f32, *b as f32);
        }
        std::fs::write(&p, b"NOPE\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(Image::read_ugsi(&p), Err(Error::Header { .. })));
        std::fs::write(&p, b"UGSI\x02\0\0\0\x02\0\0\0\0\0").unwrap();
        assert!(matches!(Image::read_ugsi(&p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn png_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(16, 12, |x, y| ((x + y) as f64 / 26.0).min(1.0));
        let p = dir.path().join("a.png");
        img.write_png(&p).unwrap();
        let back = Image::read_png(&p).unwrap();
        assert_eq!(back.dims(), img.dims());
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

//! Raster images in equirectangular (ERP) layout.
//!
//! Samples are stored as `f64` in `[0, 1]`, row-major, channels interleaved.
//! Besides the usual PNG / JPEG codecs, images can be stored in a raw float
//! format for bit-exact fixtures:
//!
//! ```text
//! "ERPF" | width: u32 LE | height: u32 LE | channels: u32 LE | f32 LE samples (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;

use crate::error::{arg_err, Error, Result};

pub const ERPF_MAGIC: &[u8; 4] = b"ERPF";

#[derive(Clone, Debug, PartialEq)]
pub struct ErpImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ErpImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        let img = Self::planar(width, height, channels, pixels)?;
        if width != 2 * height {
            warn!("image {width}x{height} is not 2:1; treating it as equirectangular anyway");
        }
        Ok(img)
    }

    /// Same checks as [`ErpImage::new`] without the aspect-ratio warning, for
    /// rasters that are not panoramas such as extracted viewports.
    pub fn planar(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return arg_err(format!("image must be at least 2x2, got {width}x{height}"));
        }
        if channels != 1 && channels != 3 {
            return arg_err(format!("channels must be 1 or 3, got {channels}"));
        }
        if pixels.len() != width * height * channels {
            return arg_err(format!("pixel count {} does not match {width}x{height}x{channels}", pixels.len()));
        }
        Ok(Self { width, height, channels, pixels })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels)
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

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.pixels[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn same_shape(&self, other: &ErpImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &ErpImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            arg_err(format!(
                "dimension mismatch: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            ))
        }
    }

    /// Rec.601 luma plane, one value per pixel.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        self.pixels.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
    }

    /// Single-channel image holding the Rec.601 luma.
    pub fn to_luma_image(&self) -> ErpImage {
        ErpImage { width: self.width, height: self.height, channels: 1, pixels: self.luma() }
    }

    pub fn read_erpf(reader: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != ERPF_MAGIC {
            return Err(Error::Format(format!("bad ERPF magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        let mut next_u32 = |r: &mut dyn Read| -> Result<usize> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word) as usize)
        };
        let width = next_u32(reader)?;
        let height = next_u32(reader)?;
        let channels = next_u32(reader)?;
        let count = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Format("ERPF dimensions overflow".into()))?;
        let mut raw = vec![0u8; count * 4];
        reader.read_exact(&mut raw)?;
        let pixels = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        Self::new(width, height, channels, pixels)
    }

    /// Samples are narrowed to `f32`.
    pub fn write_erpf(&self, writer: &mut impl Write) -> Result<()> {
        writer.write_all(ERPF_MAGIC)?;
        for v in [self.width, self.height, self.channels] {
            writer.write_all(&(v as u32).to_le_bytes())?;
        }
        for &p in &self.pixels {
            writer.write_all(&(p as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Loads `.erpf` files with the raw reader and anything else through the
    /// image codecs (converted to RGB, scaled to `[0, 1]`).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_erpf(path) {
            let mut r = BufReader::new(File::open(path)?);
            return Self::read_erpf(&mut r);
        }
        let rgb = ::image::open(path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
        Self::new(w as usize, h as usize, 3, pixels)
    }

    /// Saves as `.erpf` (lossless up to f32) or as an 8-bit PNG / JPEG.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_erpf(path) {
            let mut w = BufWriter::new(File::create(path)?);
            self.write_erpf(&mut w)?;
            w.flush()?;
            return Ok(());
        }
        let bytes: Vec<u8> = self.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 3 {
            ::image::RgbImage::from_raw(w, h, bytes)
                .ok_or_else(|| Error::Format("raster size mismatch".into()))?
                .save(path)?;
        } else {
            ::image::GrayImage::from_raw(w, h, bytes)
                .ok_or_else(|| Error::Format("raster size mismatch".into()))?
                .save(path)?;
        }
        Ok(())
    }
}

fn is_erpf(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("erpf"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(ErpImage::new(1, 4, 1, vec![0.0; 4]).is_err());
        assert!(ErpImage::new(4, 2, 2, vec![0.0; 16]).is_err());
        assert!(ErpImage::new(4, 2, 3, vec![0.0; 23]).is_err());
        assert!(ErpImage::new(4, 2, 3, vec![0.0; 24]).is_ok());
        // non 2:1 is accepted (warning only)
        assert!(ErpImage::new(5, 5, 1, vec![0.0; 25]).is_ok());
    }

    #[test]
    fn erpf_layout_is_bit_exact() {
        let img = ErpImage::from_fn(4, 2, 3, |x, y, c| (x + 10 * y + 100 * c) as f64 / 1024.0).unwrap();
        let mut buf = Vec::new();
        img.write_erpf(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"ERPF");
        assert_eq!(&buf[4..8], &4u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &3u32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 4 * 24);
        // second sample is channel 1 of pixel (0,0)
        assert_eq!(&buf[20..24], &((100.0f64 / 1024.0) as f32).to_le_bytes());
        let back = ErpImage::read_erpf(&mut buf.as_slice()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn erpf_rejects_bad_magic() {
        let bytes = b"ERPX\x02\0\0\0\x02\0\0\0\x01\0\0\0";
        assert!(matches!(ErpImage::read_erpf(&mut &bytes[..]), Err(Error::Format(_))));
    }

    #[test]
    fn png_roundtrip_quantizes_to_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = ErpImage::from_fn(8, 4, 3, |x, y, c| ((x * 31 + y * 17 + c * 5) % 256) as f64 / 255.0).unwrap();
        img.save(&path).unwrap();
        let back = ErpImage::load(&path).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn luma_weights() {
        let img = ErpImage::from_fn(2, 2, 3, |_, _, c| [1.0, 0.0, 0.0][c]).unwrap();
        assert!(img.luma().iter().all(|&l| (l - 0.299).abs() < 1e-15));
    }
}

//! RGB raster images, PNG/JPEG I/O and luminance conversion.

use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageEncoder, ImageReader};

use crate::error::{Error, Result};

/// Smallest accepted side length. Four dyadic scales still keep a 2x2 support.
pub const MIN_SIDE: u32 = 32;

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// 8-bit RGB image stored row-major, three interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::ImageTooSmall {
                width,
                height,
                min: MIN_SIDE,
            });
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "buffer has {} bytes, expected {expected}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from a per-pixel closure returning `[r, g, b]`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Hex SHA-256 over the dimensions and pixel bytes.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update(&self.data);
        hex::encode(h.finalize())
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Replaces the buffer with one of identical length. Used by transformations
    /// that keep the geometry.
    pub(crate) fn with_data(&self, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Mean BT.601 luma on the 0..=255 scale.
    pub fn mean_luma(&self) -> f64 {
        let sum: f64 = self
            .data
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .sum();
        sum / (self.width as f64 * self.height as f64)
    }

    fn from_dynamic(img: image::DynamicImage) -> Result<Self> {
        let rgb = img.into_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w, h, rgb.into_raw())
    }

    /// Decodes PNG or JPEG bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let reader = ImageReader::new(Cursor::new(bytes))
            .with_guessed_format()
            .map_err(|e| Error::Decode {
                path: "<memory>".into(),
                message: e.to_string(),
            })?;
        let img = reader.decode().map_err(|e| Error::Decode {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        Self::from_dynamic(img)
    }

    pub fn encode(&self, format: ImageFormat) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        match format {
            ImageFormat::Png => {
                image::codecs::png::PngEncoder::new(&mut out)
                    .write_image(&self.data, self.width, self.height, image::ExtendedColorType::Rgb8)
                    .map_err(|e| Error::Encode(e.to_string()))?;
            }
            ImageFormat::Jpeg { quality } => {
                let quality = quality.clamp(1, 100);
                JpegEncoder::new_with_quality(&mut out, quality)
                    .write_image(&self.data, self.width, self.height, image::ExtendedColorType::Rgb8)
                    .map_err(|e| Error::Encode(e.to_string()))?;
            }
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn luma(r: u8, g: u8, b: u8) -> f64 {
    LUMA_R * r as f64 + LUMA_G * g as f64 + LUMA_B * b as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    /// Baseline JPEG; quality in 1..=100.
    Jpeg { quality: u8 },
}

impl ImageFormat {
    /// Picks the format from a file extension, PNG when unknown.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("jpg") | Some("jpeg") => ImageFormat::Jpeg { quality: 95 },
            _ => ImageFormat::Png,
        }
    }
}

/// Identifies the JPEG codec used for the compression transformation.
pub const JPEG_ENCODER_ID: &str = "image-rs jpeg encoder 0.25";

/// Luminance plane with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl GrayImage {
    /// Values outside [0, 1] are clamped.
    pub fn new(width: u32, height: u32, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidImage(format!(
                "gray buffer has {} values, expected {}",
                data.len(),
                width as usize * height as usize
            )));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Image::decode(&bytes).map_err(|e| match e {
        Error::Decode { message, .. } => Error::Decode {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn save_image(image: &Image, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = image.encode(format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn to_luminance(image: &Image) -> GrayImage {
    let data = image
        .data
        .chunks_exact(3)
        .map(|p| (luma(p[0], p[1], p[2]) / 255.0).clamp(0.0, 1.0))
        .collect();
    GrayImage {
        width: image.width,
        height: image.height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_images() {
        let err = Image::filled(8, 8, [0, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("image too small"));
    }

    #[test]
    fn luminance_of_constant_colours() {
        let black = to_luminance(&Image::filled(32, 32, [0, 0, 0]).unwrap());
        assert!(black.data().iter().all(|&v| v == 0.0));
        let white = to_luminance(&Image::filled(32, 32, [255, 255, 255]).unwrap());
        assert!(white.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let red = to_luminance(&Image::filled(32, 32, [255, 0, 0]).unwrap());
        assert!(red.data().iter().all(|&v| (v - 0.299).abs() < 1e-12));
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let img = Image::from_fn(40, 33, |x, y| [(x * 6) as u8, (y * 7) as u8, ((x + y) * 3) as u8]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        save_image(&img, &path, ImageFormat::Png).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn grayscale_png_expands_to_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let gray = image::GrayImage::from_fn(32, 32, |x, _| image::Luma([(x * 8) as u8]));
        gray.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixel(5, 3), [40, 40, 40]);
    }

    #[test]
    fn truncated_file_is_a_decode_error() {
        let img = Image::filled(64, 64, [10, 20, 30]).unwrap();
        let bytes = img.encode(ImageFormat::Png).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&path), Err(Error::Decode { .. })));
        assert!(matches!(load_image(dir.path().join("missing.png")), Err(Error::Io { .. })));
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let img = Image::filled(32, 32, [1, 2, 3]).unwrap();
        let err = save_image(&img, "/nonexistent-dir/x/y.png", ImageFormat::Png).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}

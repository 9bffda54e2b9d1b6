//! Flat image tensors and PNG I/O.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer has {found} values, expected {expected} ({width}x{height}x{channels})")]
    LengthMismatch {
        width: u32,
        height: u32,
        channels: u32,
        expected: usize,
        found: usize,
    },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(u32),
    #[error("image has zero width or height")]
    Empty,
    #[error("non-finite pixel value at index {0}")]
    NonFinite(usize),
    #[error("cannot decode {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: ::image::ImageError,
    },
    #[error("cannot encode {path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: ::image::ImageError,
    },
}

/// A `width x height x channels` image stored row-major with interleaved
/// channels. Values nominally live in `[0, 1]` but are not clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    width: u32,
    height: u32,
    channels: u32,
    pixels: Vec<f32>,
}

impl ImageTensor {
    pub fn new(width: u32, height: u32, channels: u32, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        if width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(ImageError::LengthMismatch {
                width,
                height,
                channels,
                expected,
                found: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Image filled with a single value.
    pub fn filled(width: u32, height: u32, channels: u32, value: f32) -> Result<Self, ImageError> {
        let n = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; n])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn dims(&self) -> (u32, u32, u32) {
        (self.width, self.height, self.channels)
    }

    /// Flattened length `d = width * height * channels`.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    /// Mirror left-right: `(x, y, ch) -> (width - 1 - x, y, ch)`.
    pub fn horizontal_flip(&self) -> ImageTensor {
        let (w, h, c) = (self.width as usize, self.height as usize, self.channels as usize);
        let mut out = vec![0f32; self.pixels.len()];
        for y in 0..h {
            let row = y * w * c;
            for x in 0..w {
                let src = row + x * c;
                let dst = row + (w - 1 - x) * c;
                out[dst..dst + c].copy_from_slice(&self.pixels[src..src + c]);
            }
        }
        ImageTensor {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels: out,
        }
    }

    /// Copy with every value clamped to `[0, 1]`.
    pub fn clamped(&self) -> ImageTensor {
        ImageTensor {
            pixels: self.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Clamp to `[0, 1]` and quantize to 8 bits.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(width: u32, height: u32, channels: u32, bytes: &[u8]) -> Result<Self, ImageError> {
        Self::new(
            width,
            height,
            channels,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    /// Render step: clamp, quantize, write PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let color = if self.channels == 1 {
            ::image::ExtendedColorType::L8
        } else {
            ::image::ExtendedColorType::Rgb8
        };
        ::image::save_buffer(path, &self.to_bytes(), self.width, self.height, color).map_err(|source| {
            ImageError::Encode {
                path: path.display().to_string(),
                source,
            }
        })
    }

    /// Decode an image file, optionally resizing to `resize` (width, height)
    /// with a triangle filter, and convert to `channels` (1 or 3).
    pub fn load(path: impl AsRef<Path>, resize: Option<(u32, u32)>, channels: u32) -> Result<Self, ImageError> {
        let path = path.as_ref();
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let mut img = ::image::open(path).map_err(|source| ImageError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        if let Some((w, h)) = resize {
            if img.width() != w || img.height() != h {
                img = img.resize_exact(w, h, ::image::imageops::FilterType::Triangle);
            }
        }
        let (w, h) = (img.width(), img.height());
        let bytes = if channels == 1 {
            img.to_luma8().into_raw()
        } else {
            img.to_rgb8().into_raw()
        };
        Self::from_bytes(w, h, channels, &bytes)
    }
}

//! Raster images and the pixel-level transforms used by the detectors.
//!
//! Every image is an 8-bit, row-major, channel-interleaved buffer with one
//! (grayscale) or three (RGB) channels.

mod color;
mod filter;
mod ppm;
mod stats;

use thiserror::Error;

pub use color::{
    brightness_transform, hsv_to_rgb, rgb_to_hsv, BrightnessMode, BrightnessSpec, Hsv,
};
pub use filter::{spatial_smooth, FilterShape, FilterSpec};
pub use ppm::{decode_pnm, encode_pnm, load_ppm, save_ppm};
pub use stats::{pixel_entropy, quantize};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {height}x{width}")]
    EmptyImage { height: usize, width: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("operation requires a 3-channel image, got {0} channel(s)")]
    NotRgb(usize),
    #[error("quantization interval count {0} outside [2, 256]")]
    Intervals(usize),
    #[error("filter size {0} must be odd and at least 3")]
    FilterSize(usize),
    #[error("malformed PNM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PNM maxval {0} (only 255 is accepted)")]
    Maxval(u32),
    #[error("truncated PNM payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ImageError::EmptyImage { height, width });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ImageError::BufferLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// An image with every pixel level equal to `level`.
    pub fn filled(height: usize, width: usize, channels: usize, level: u8) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![level; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Total number of pixel levels (height × width × channels).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, level: u8) {
        self.data[(row * self.width + col) * self.channels + channel] = level;
    }

    /// Pixel levels scaled into [0, 1], the classifier input convention.
    pub fn normalized(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v) / 255.0).collect()
    }

    /// Inverse of [`Image::normalized`]: rounds and clamps to 8-bit levels.
    pub fn from_normalized(
        height: usize,
        width: usize,
        channels: usize,
        values: &[f64],
    ) -> Result<Self> {
        let data = values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Self::new(height, width, channels, data)
    }

    pub(crate) fn with_data(&self, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { data, ..*self }
    }
}

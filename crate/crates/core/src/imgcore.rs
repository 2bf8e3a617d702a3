//! Image containers and lossless file I/O.
//!
//! All real-valued planes live in [0, 1]; 8-bit samples are converted only
//! when reading or writing files.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// An 8-bit image with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteImage {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl ByteImage {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::config(format!(
                "images carry 1 or 3 channels, got {channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::config(format!(
                "sample buffer holds {} bytes, expected {}",
                samples.len(),
                width * height * channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    /// Image filled with a single color (`color.len()` must be 1 or 3).
    pub fn filled(width: usize, height: usize, color: &[u8]) -> Result<Self> {
        let samples = color
            .iter()
            .copied()
            .cycle()
            .take(width * height * color.len())
            .collect();
        Self::new(width, height, color.len(), samples)
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

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    /// Channel samples of pixel `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.samples[i..i + self.channels]
    }

    /// Iterates pixels in row-major order as channel slices.
    pub fn pixels(&self) -> std::slice::ChunksExact<'_, u8> {
        self.samples.chunks_exact(self.channels)
    }

    pub(crate) fn require_channels(&self, expected: usize) -> Result<()> {
        if self.channels == expected {
            Ok(())
        } else {
            Err(Error::Channel {
                expected,
                got: self.channels,
            })
        }
    }
}

/// Real-valued image plane whose values stay inside a declared range.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    values: Vec<f64>,
    range: (f64, f64),
}

impl ScalarField {
    pub fn new(width: usize, height: usize, values: Vec<f64>, range: (f64, f64)) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("field dimensions must be positive"));
        }
        if values.len() != width * height {
            return Err(Error::config(format!(
                "field holds {} values, expected {}",
                values.len(),
                width * height
            )));
        }
        if !(range.0 <= range.1) {
            return Err(Error::config(format!("invalid field range {range:?}")));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !(**v >= range.0 && **v <= range.1))
        {
            return Err(Error::config(format!(
                "field value {v} outside declared range [{}, {}]",
                range.0, range.1
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            range,
        })
    }

    /// Field on [0, 1].
    pub fn unit(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(width, height, values, (0.0, 1.0))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::unit(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Quantizes to 8 bits (values are clamped to [0, 1] first).
    pub fn to_byte_image(&self) -> ByteImage {
        let samples = self
            .values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ByteImage::new(self.width, self.height, 1, samples).expect("valid dimensions")
    }
}

/// Boolean grid, `true` = foreground (or inside the contour).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("mask dimensions must be positive"));
        }
        if bits.len() != width * height {
            return Err(Error::config(format!(
                "mask holds {} bits, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    /// Mask built from a per-pixel predicate.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Reads with signed coordinates; anything off the grid is background.
    #[inline]
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            false
        } else {
            self.bits[y as usize * self.width + x as usize]
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn all(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }

    pub fn none(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Pixel-wise complement.
    pub fn not(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// `true` when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    pub fn to_byte_image(&self) -> ByteImage {
        let samples = self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
        ByteImage::new(self.width, self.height, 1, samples).expect("valid dimensions")
    }
}

/// Weights for the RGB to luma conversion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LumaWeights {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Default for LumaWeights {
    /// ITU-R BT.601.
    fn default() -> Self {
        Self {
            r: 0.299,
            g: 0.587,
            b: 0.114,
        }
    }
}

/// Converts to a single [0, 1] plane using BT.601 luma for RGB inputs.
pub fn to_grayscale(img: &ByteImage) -> ScalarField {
    to_grayscale_with(img, LumaWeights::default())
}

pub fn to_grayscale_with(img: &ByteImage, weights: LumaWeights) -> ScalarField {
    let values = match img.channels() {
        1 => img.samples().iter().map(|v| f64::from(*v) / 255.0).collect(),
        _ => img
            .pixels()
            .map(|p| {
                let luma = weights.r * f64::from(p[0])
                    + weights.g * f64::from(p[1])
                    + weights.b * f64::from(p[2]);
                (luma / 255.0).clamp(0.0, 1.0)
            })
            .collect(),
    };
    ScalarField::unit(img.width(), img.height(), values).expect("luma stays in [0, 1]")
}

/// An ordered list of frame files sharing one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<PathBuf>,
    frame_rate: Option<f64>,
}

const FRAME_EXTENSIONS: &[&str] = &["png", "ppm", "pgm", "pnm"];

impl FrameSequence {
    pub fn new(frames: Vec<PathBuf>, frame_rate: Option<f64>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::config("a frame sequence needs at least one frame"));
        }
        Ok(Self { frames, frame_rate })
    }

    /// Collects every PNG/PPM/PGM file in `dir`, sorted by file name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut frames = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let is_frame = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            if is_frame && path.is_file() {
                frames.push(path);
            }
        }
        frames.sort();
        if frames.is_empty() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no image frames in directory"),
            ));
        }
        Ok(Self {
            frames,
            frame_rate: None,
        })
    }

    pub fn frames(&self) -> &[PathBuf] {
        &self.frames
    }

    pub fn frame_rate(&self) -> Option<f64> {
        self.frame_rate
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Decodes every frame, failing on the first size mismatch.
    pub fn load_all(&self) -> Result<Vec<ByteImage>> {
        let mut out: Vec<ByteImage> = Vec::with_capacity(self.frames.len());
        for path in &self.frames {
            let img = load_image(path)?;
            if let Some(first) = out.first() {
                if first.dims() != img.dims() {
                    return Err(Error::Dimension {
                        expected: first.dims(),
                        got: img.dims(),
                    });
                }
            }
            out.push(img);
        }
        Ok(out)
    }
}

/// Decodes an 8-bit gray or RGB PNG/PPM/PGM file.
pub fn load_image(path: impl AsRef<Path>) -> Result<ByteImage> {
    let path = path.as_ref();
    let format_err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => {
            Error::io(path, io)
        }
        other => format_err(other.to_string()),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => ByteImage::new(width, height, 1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => ByteImage::new(width, height, 3, buf.into_raw()),
        other => Err(format_err(format!(
            "only 8-bit gray or RGB images are supported, got {:?}",
            other.color()
        ))),
    }
}

/// Reads a mask file; samples of 128 or more are foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = load_image(path)?;
    let bits = img.pixels().map(|p| p.iter().any(|v| *v >= 128)).collect();
    BinaryMask::new(img.width(), img.height(), bits)
}

/// Writes an image as PNG.
pub fn save_image(img: &ByteImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = if img.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        img.samples(),
        img.width() as u32,
        img.height() as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => {
            Error::io(path, io)
        }
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

/// Writes a mask as a single-channel PNG with foreground 255 and background 0.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_image(&mask.to_byte_image(), path)
}

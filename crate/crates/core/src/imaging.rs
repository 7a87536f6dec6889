//! Core image types: binary templates, continuous grayscale images, and
//! stacks of stochastic realizations.
//!
//! All in-memory pixel data is real-valued in `[0, 1]`; quantization happens
//! only at file I/O (see [`crate::pgm`]). Types are immutable after
//! construction and all operations here are pure.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;

/// Smallest accepted distance of a template density from 0 or 1. Densities
/// closer to the boundary than this are rejected rather than clamped.
pub const MIN_DENSITY_MARGIN: f64 = 1e-6;

/// A binary digital template: the pattern sent to the printer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTemplate {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryTemplate {
    /// Build a template from row-major bits. Every element must be 0 or 1.
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::parameter("template dimensions must be positive"));
        }
        if bits.len() != width * height {
            return Err(Error::parameter(format!(
                "bit buffer length {} does not match {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::parameter(format!(
                "bit at index {pos} is {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major bit buffer.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn bit(&self, row: usize, col: usize) -> u8 {
        debug_assert!(row < self.height && col < self.width);
        self.bits[row * self.width + col]
    }

    /// Fraction of one-bits.
    pub fn density(&self) -> f64 {
        let ones: u64 = self.bits.iter().map(|&b| b as u64).sum();
        ones as f64 / self.bits.len() as f64
    }

    /// Interpret a grayscale image whose pixels are exactly 0.0 or 1.0 as a
    /// binary template.
    pub fn try_from_gray(img: &GrayImage) -> Result<Self> {
        let mut bits = Vec::with_capacity(img.pixels.len());
        for (i, &p) in img.pixels.iter().enumerate() {
            if p == 0.0 {
                bits.push(0);
            } else if p == 1.0 {
                bits.push(1);
            } else {
                return Err(Error::parameter(format!(
                    "pixel {i} is {p}, not exactly 0 or 1; binarize first"
                )));
            }
        }
        Self::new(img.width, img.height, bits)
    }
}

/// A continuous grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Build an image from row-major pixels. Every value must lie in `[0, 1]`.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::parameter("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::parameter(format!(
                "pixel buffer length {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(pos) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::parameter(format!(
                "pixel at index {pos} is {}, outside [0, 1]",
                pixels[pos]
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Constant image.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.height && col < self.width);
        self.pixels[row * self.width + col]
    }

    pub fn same_shape(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl From<&BinaryTemplate> for GrayImage {
    fn from(t: &BinaryTemplate) -> Self {
        GrayImage {
            width: t.width,
            height: t.height,
            pixels: t.bits.iter().map(|&b| b as f64).collect(),
        }
    }
}

/// K stochastic outputs for a single input: the unit of all variability
/// analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationStack {
    images: Vec<GrayImage>,
}

impl RealizationStack {
    /// All images must share dimensions; at least one is required.
    pub fn new(images: Vec<GrayImage>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::parameter("a realization stack needs at least one image"))?;
        let (w, h) = (first.width(), first.height());
        if let Some(pos) = images
            .iter()
            .position(|im| im.width() != w || im.height() != h)
        {
            return Err(Error::parameter(format!(
                "realization {pos} is {}x{}, expected {w}x{h}",
                images[pos].width(),
                images[pos].height()
            )));
        }
        Ok(Self { images })
    }

    pub fn k(&self) -> usize {
        self.images.len()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    pub fn get(&self, index: usize) -> &GrayImage {
        &self.images[index]
    }

    /// The first `k` realizations as a new stack (deterministic subsetting
    /// used by the K-sweep analysis).
    pub fn prefix(&self, k: usize) -> Result<RealizationStack> {
        if k == 0 || k > self.images.len() {
            return Err(Error::parameter(format!(
                "prefix length {k} outside 1..={}",
                self.images.len()
            )));
        }
        Ok(RealizationStack {
            images: self.images[..k].to_vec(),
        })
    }
}

/// Generate a pseudo-random binary template. Each bit is an independent draw
/// with `P(bit = 1) = density`; the result is a pure function of the
/// arguments.
pub fn generate_template(
    width: usize,
    height: usize,
    density: f64,
    seed: u64,
) -> Result<BinaryTemplate> {
    if width == 0 || height == 0 {
        return Err(Error::parameter("template dimensions must be positive"));
    }
    if !density.is_finite()
        || density < MIN_DENSITY_MARGIN
        || density > 1.0 - MIN_DENSITY_MARGIN
    {
        return Err(Error::parameter(format!(
            "density {density} outside [{MIN_DENSITY_MARGIN}, {}]",
            1.0 - MIN_DENSITY_MARGIN
        )));
    }
    let mut rng = rng::stream(seed, "imaging/template", 0);
    let bits = (0..width * height)
        .map(|_| u8::from(rng.random::<f64>() < density))
        .collect();
    BinaryTemplate::new(width, height, bits)
}

/// Replicate each template pixel as an `s x s` block.
pub fn upscale(t: &BinaryTemplate, s: usize) -> Result<BinaryTemplate> {
    if s == 0 {
        return Err(Error::parameter("upscale factor must be at least 1"));
    }
    let (w, h) = (t.width() * s, t.height() * s);
    let mut bits = vec![0u8; w * h];
    for row in 0..h {
        let src_row = row / s;
        for col in 0..w {
            bits[row * w + col] = t.bit(src_row, col / s);
        }
    }
    BinaryTemplate::new(w, h, bits)
}

/// Reduce each `s x s` block to its arithmetic mean. Dimensions must be
/// divisible by `s`.
pub fn block_mean_downscale(x: &GrayImage, s: usize) -> Result<GrayImage> {
    if s == 0 {
        return Err(Error::parameter("downscale factor must be at least 1"));
    }
    if x.width() % s != 0 || x.height() % s != 0 {
        return Err(Error::parameter(format!(
            "image {}x{} not divisible by block size {s}",
            x.width(),
            x.height()
        )));
    }
    let (w, h) = (x.width() / s, x.height() / s);
    let inv = 1.0 / (s * s) as f64;
    let mut pixels = vec![0.0f64; w * h];
    for row in 0..h {
        for col in 0..w {
            let mut sum = 0.0;
            for dr in 0..s {
                for dc in 0..s {
                    sum += x.get(row * s + dr, col * s + dc);
                }
            }
            // guard against accumulated rounding pushing the mean past 1
            pixels[row * w + col] = (sum * inv).clamp(0.0, 1.0);
        }
    }
    GrayImage::new(w, h, pixels)
}

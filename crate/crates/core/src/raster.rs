//! Single-channel intensity grids and the translation type shared by every
//! stage of the registration pipeline.
//!
//! Pixels are held as `f64` regardless of the on-disk container. Conversion
//! to and from integers happens only in [`load_raster`] and [`save_raster`].
//! Pixel `(x, y)` is column `x`, row `y`, stored row-major.

use std::fmt;
use std::fs;
use std::io::Cursor;
use std::ops::{Add, Neg, Sub};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::atomic_write;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("multi-channel input ({0} channels)")]
    MultiChannel(u8),
    #[error("declared bit depth {declared} conflicts with stored value {value}")]
    DepthConflict { declared: u8, value: u32 },
    #[error("raster dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("expected {expected} pixels, got {actual}")]
    PixelCount { expected: usize, actual: usize },
    #[error("pixel {value} at index {index} outside [0, {max}]")]
    PixelOutOfRange { index: usize, value: f64, max: f64 },
    #[error("displacement ({dx}, {dy}) out of range for {width}x{height} raster")]
    DisplacementOutOfRange {
        dx: f64,
        dy: f64,
        width: usize,
        height: usize,
    },
    #[error("fill value {0} outside the raster's intensity range")]
    InvalidFill(f64),
    #[error("encoding failed: {0}")]
    Encode(String),
}

/// Bits per sample of the sensor data, independent of the container width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BitDepth {
    Eight,
    Twelve,
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Twelve => 12,
            BitDepth::Sixteen => 16,
        }
    }

    /// Largest representable intensity, `2^bits - 1`.
    pub fn max_value(self) -> f64 {
        ((1u32 << self.bits()) - 1) as f64
    }

    fn container_is_wide(self) -> bool {
        self != BitDepth::Eight
    }
}

impl TryFrom<u8> for BitDepth {
    type Error = String;

    fn try_from(bits: u8) -> Result<Self, Self::Error> {
        match bits {
            8 => Ok(BitDepth::Eight),
            12 => Ok(BitDepth::Twelve),
            16 => Ok(BitDepth::Sixteen),
            other => Err(format!("unsupported bit depth {other}; expected 8, 12 or 16")),
        }
    }
}

impl From<BitDepth> for u8 {
    fn from(depth: BitDepth) -> u8 {
        depth.bits()
    }
}

impl fmt::Display for BitDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    bit_depth: BitDepth,
    pixels: Vec<f64>,
}

impl Raster {
    /// Builds a raster from row-major pixels, checking the value range.
    pub fn new(
        width: usize,
        height: usize,
        bit_depth: BitDepth,
        pixels: Vec<f64>,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        if pixels.len() != width * height {
            return Err(RasterError::PixelCount {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        let max = bit_depth.max_value();
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=max).contains(*v))
        {
            return Err(RasterError::PixelOutOfRange { index, value, max });
        }
        Ok(Self {
            width,
            height,
            bit_depth,
            pixels,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        bit_depth: BitDepth,
        value: f64,
    ) -> Result<Self, RasterError> {
        Self::new(width, height, bit_depth, vec![value; width * height])
    }

    /// Builds a raster by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        bit_depth: BitDepth,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, RasterError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, bit_depth, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Translation between two images in pixels.
///
/// A point `p` on the source image corresponds to `p + (dx, dy)` on the
/// target image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { dx: 0.0, dy: 0.0 };

    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

impl Neg for Displacement {
    type Output = Displacement;

    fn neg(self) -> Displacement {
        Displacement::new(-self.dx, -self.dy)
    }
}

impl Add for Displacement {
    type Output = Displacement;

    fn add(self, rhs: Displacement) -> Displacement {
        Displacement::new(self.dx + rhs.dx, self.dy + rhs.dy)
    }
}

impl Sub for Displacement {
    type Output = Displacement;

    fn sub(self, rhs: Displacement) -> Displacement {
        Displacement::new(self.dx - rhs.dx, self.dy - rhs.dy)
    }
}

impl fmt::Display for Displacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.dx, self.dy)
    }
}

/// How samples falling outside the source raster are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Coordinates wrap modulo the raster dimensions.
    Circular,
    /// Out-of-bounds samples take the fill value.
    CropFill,
}

/// Resamples `r` so that `output(x, y) = input(x - dx, y - dy)`, using
/// bilinear interpolation for fractional displacements.
pub fn shift_raster(
    r: &Raster,
    d: Displacement,
    mode: ShiftMode,
    fill: f64,
) -> Result<Raster, RasterError> {
    let (w, h) = r.dimensions();
    if !d.is_finite() || d.dx.abs() >= w as f64 || d.dy.abs() >= h as f64 {
        return Err(RasterError::DisplacementOutOfRange {
            dx: d.dx,
            dy: d.dy,
            width: w,
            height: h,
        });
    }
    if mode == ShiftMode::CropFill && !(0.0..=r.bit_depth.max_value()).contains(&fill) {
        return Err(RasterError::InvalidFill(fill));
    }

    // Sample position x - dx = x + ox + fx with integer ox and fx in [0, 1).
    let ox = (-d.dx).floor();
    let fx = -d.dx - ox;
    let oy = (-d.dy).floor();
    let fy = -d.dy - oy;
    let (ox, oy) = (ox as i64, oy as i64);

    let sample = |x: i64, y: i64| -> f64 {
        match mode {
            ShiftMode::Circular => {
                let xx = x.rem_euclid(w as i64) as usize;
                let yy = y.rem_euclid(h as i64) as usize;
                r.pixels[yy * w + xx]
            }
            ShiftMode::CropFill => {
                if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    fill
                } else {
                    r.pixels[y as usize * w + x as usize]
                }
            }
        }
    };

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        let sy = y + oy;
        for x in 0..w as i64 {
            let sx = x + ox;
            let top = sample(sx, sy) * (1.0 - fx) + sample(sx + 1, sy) * fx;
            let value = if fy == 0.0 {
                top
            } else {
                let bottom = sample(sx, sy + 1) * (1.0 - fx) + sample(sx + 1, sy + 1) * fx;
                top * (1.0 - fy) + bottom * fy
            };
            out.push(value);
        }
    }
    Raster::new(w, h, r.bit_depth, clamp_all(out, r.bit_depth.max_value()))
}

// Bilinear weights sum to one, so only rounding noise can leave the range.
fn clamp_all(mut pixels: Vec<f64>, max: f64) -> Vec<f64> {
    for p in &mut pixels {
        *p = p.clamp(0.0, max);
    }
    pixels
}

/// Linear min-max stretch onto `[0, 255]`, rounding half away from zero.
/// A constant image maps to all zeros.
pub fn normalize_to_display(r: &Raster) -> Raster {
    let (min, max) = r
        .pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = max - min;
    let pixels = if range > 0.0 {
        r.pixels
            .iter()
            .map(|&v| (255.0 * (v - min) / range).round())
            .collect()
    } else {
        vec![0.0; r.pixels.len()]
    };
    Raster {
        width: r.width,
        height: r.height,
        bit_depth: BitDepth::Eight,
        pixels,
    }
}

/// Reads a binary PGM (P5) or single-channel PNG.
///
/// `expected_bit_depth` overrides the depth implied by the container, for
/// example 12-bit sensor data stored in 16-bit files. Stored values must fit
/// the resulting depth.
pub fn load_raster(
    path: impl AsRef<Path>,
    expected_bit_depth: Option<BitDepth>,
) -> Result<Raster, RasterError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_raster(&bytes, expected_bit_depth)
}

/// Decodes an in-memory PGM or PNG; see [`load_raster`].
pub fn decode_raster(
    bytes: &[u8],
    expected_bit_depth: Option<BitDepth>,
) -> Result<Raster, RasterError> {
    let (width, height, container, values) = if bytes.starts_with(b"P5") {
        decode_pgm(bytes)?
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)?
    } else if bytes.starts_with(b"P6") {
        return Err(RasterError::MultiChannel(3));
    } else {
        return Err(RasterError::UnsupportedFormat(
            "expected binary PGM (P5) or PNG".into(),
        ));
    };

    let depth = expected_bit_depth.unwrap_or(container);
    let max = depth.max_value() as u32;
    if let Some(&value) = values.iter().find(|&&v| v > max) {
        return Err(RasterError::DepthConflict {
            declared: depth.bits(),
            value,
        });
    }
    Raster::new(
        width,
        height,
        depth,
        values.into_iter().map(f64::from).collect(),
    )
}

type Decoded = (usize, usize, BitDepth, Vec<u32>);

fn decode_pgm(bytes: &[u8]) -> Result<Decoded, RasterError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and `#` comments may separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RasterError::UnsupportedFormat("malformed PGM header".into()))?;
    }
    // Exactly one whitespace byte precedes the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(RasterError::UnsupportedFormat("malformed PGM header".into()));
    }
    pos += 1;

    let [width, height, maxval] = fields;
    let container = match maxval {
        255 => BitDepth::Eight,
        65535 => BitDepth::Sixteen,
        other => {
            return Err(RasterError::UnsupportedFormat(format!(
                "PGM maxval {other}; expected 255 or 65535"
            )))
        }
    };
    let sample_bytes = if container.container_is_wide() { 2 } else { 1 };
    let data = &bytes[pos..];
    let expected = width * height * sample_bytes;
    if data.len() < expected {
        return Err(RasterError::UnsupportedFormat(format!(
            "truncated PGM raster: {} of {expected} bytes",
            data.len()
        )));
    }
    let values = if sample_bytes == 2 {
        data[..expected]
            .chunks_exact(2)
            .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    } else {
        data[..expected].iter().map(|&b| u32::from(b)).collect()
    };
    Ok((width, height, container, values))
}

fn decode_png(bytes: &[u8]) -> Result<Decoded, RasterError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| RasterError::UnsupportedFormat(e.to_string()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => Ok((
            width,
            height,
            BitDepth::Eight,
            buf.into_raw().into_iter().map(u32::from).collect(),
        )),
        DynamicImage::ImageLuma16(buf) => Ok((
            width,
            height,
            BitDepth::Sixteen,
            buf.into_raw().into_iter().map(u32::from).collect(),
        )),
        other => Err(RasterError::MultiChannel(other.color().channel_count())),
    }
}

/// Container chosen by [`save_raster`] from the file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    Pgm,
    Png,
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Result<Self, RasterError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("pgm") => Ok(RasterFormat::Pgm),
            Some("png") => Ok(RasterFormat::Png),
            _ => Err(RasterError::UnsupportedFormat(format!(
                "cannot infer format from {}",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            RasterFormat::Pgm => "pgm",
            RasterFormat::Png => "png",
        }
    }
}

/// Writes `r` with pixels rounded to integers. 8-bit rasters use an 8-bit
/// container; 12- and 16-bit rasters use a 16-bit one.
pub fn save_raster(r: &Raster, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    let bytes = encode_raster(r, RasterFormat::from_path(path)?)?;
    atomic_write(path, &bytes).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn encode_raster(r: &Raster, format: RasterFormat) -> Result<Vec<u8>, RasterError> {
    let max = r.bit_depth.max_value();
    let ints = r.pixels.iter().map(|&v| v.round().clamp(0.0, max) as u16);
    let wide = r.bit_depth.container_is_wide();
    match format {
        RasterFormat::Pgm => {
            let maxval = if wide { 65535 } else { 255 };
            let mut out = format!("P5\n{} {}\n{}\n", r.width, r.height, maxval).into_bytes();
            if wide {
                out.extend(ints.flat_map(u16::to_be_bytes));
            } else {
                out.extend(ints.map(|v| v as u8));
            }
            Ok(out)
        }
        RasterFormat::Png => {
            let (w, h) = (r.width as u32, r.height as u32);
            let img = if wide {
                let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                    ImageBuffer::from_raw(w, h, ints.collect()).expect("pixel count checked");
                DynamicImage::ImageLuma16(buf)
            } else {
                let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                    ImageBuffer::from_raw(w, h, ints.map(|v| v as u8).collect())
                        .expect("pixel count checked");
                DynamicImage::ImageLuma8(buf)
            };
            let mut out = Cursor::new(Vec::new());
            img.write_to(&mut out, ImageFormat::Png)
                .map_err(|e| RasterError::Encode(e.to_string()))?;
            Ok(out.into_inner())
        }
    }
}

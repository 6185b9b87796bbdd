//! Artificial RGB composition from three bands warped into the reference
//! frame, and transfer of labels drawn on that composite back to each band.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Rgb};
use thiserror::Error;

use crate::annotio::{BandId, RegistryKey, TransformRegistry};
use crate::fsutil::atomic_write;
use crate::labels::{translate_labels, LabelKind, LabelSet};
use crate::raster::{normalize_to_display, shift_raster, Displacement, Raster, RasterError, ShiftMode};

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("no {kind} transform from band {reference} to band {band}")]
    MissingTransform {
        reference: BandId,
        band: BandId,
        kind: LabelKind,
    },
    #[error("channel bands must be distinct, got {0}, {1}, {2}")]
    RepeatedBand(BandId, BandId, BandId),
    #[error("reference band {0} must use the identity displacement")]
    ReferenceNotIdentity(BandId),
    #[error("band dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// A band feeding one color channel, with its displacement from the
/// reference band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSource {
    pub band: BandId,
    pub displacement: Displacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandAssignment {
    reference: BandId,
    red: ChannelSource,
    green: ChannelSource,
    blue: ChannelSource,
}

impl BandAssignment {
    pub fn new(
        reference: BandId,
        red: ChannelSource,
        green: ChannelSource,
        blue: ChannelSource,
    ) -> Result<Self, ComposeError> {
        let bands = [red.band, green.band, blue.band];
        if bands[0] == bands[1] || bands[1] == bands[2] || bands[0] == bands[2] {
            return Err(ComposeError::RepeatedBand(bands[0], bands[1], bands[2]));
        }
        for c in [red, green, blue] {
            if c.band == reference && c.displacement != Displacement::ZERO {
                return Err(ComposeError::ReferenceNotIdentity(reference));
            }
        }
        Ok(Self {
            reference,
            red,
            green,
            blue,
        })
    }

    /// Looks up the `kind` transform of each channel band in `registry`.
    pub fn from_registry(
        registry: &TransformRegistry,
        reference: BandId,
        [red, green, blue]: [BandId; 3],
        kind: LabelKind,
    ) -> Result<Self, ComposeError> {
        let lookup = |band: BandId| {
            registry
                .displacement(&RegistryKey::new(reference, band, kind))
                .map(|displacement| ChannelSource { band, displacement })
                .ok_or(ComposeError::MissingTransform { reference, band, kind })
        };
        Self::new(reference, lookup(red)?, lookup(green)?, lookup(blue)?)
    }

    pub fn reference(&self) -> BandId {
        self.reference
    }

    pub fn channels(&self) -> [ChannelSource; 3] {
        [self.red, self.green, self.blue]
    }
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// One channel (0 = red) as an 8-bit raster.
    pub fn channel(&self, c: usize) -> Raster {
        let pixels = self.data.iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect();
        Raster::new(self.width, self.height, crate::raster::BitDepth::Eight, pixels).expect("8-bit values fit")
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone()).expect("buffer sized");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| RasterError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let path = path.as_ref();
        atomic_write(path, &self.encode_png()?).map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Warps each band into the reference frame with the inverse of its
/// displacement (black outside the source frame), stretches each channel
/// to 8 bits independently, and stacks them as R, G, B.
pub fn compose_rgb(
    red: &Raster,
    green: &Raster,
    blue: &Raster,
    assign: &BandAssignment,
) -> Result<RgbImage, ComposeError> {
    let dims = red.dimensions();
    for other in [green, blue] {
        if other.dimensions() != dims {
            return Err(ComposeError::DimensionMismatch(dims, other.dimensions()));
        }
    }
    let channels = [red, green, blue]
        .into_iter()
        .zip(assign.channels())
        .map(|(band, source)| {
            let aligned = shift_raster(band, -source.displacement, ShiftMode::CropFill, 0.0)?;
            Ok(normalize_to_display(&aligned))
        })
        .collect::<Result<Vec<_>, ComposeError>>()?;

    let (w, h) = dims;
    let mut data = Vec::with_capacity(3 * w * h);
    for i in 0..w * h {
        for c in &channels {
            data.push(c.pixels()[i] as u8);
        }
    }
    Ok(RgbImage {
        width: w,
        height: h,
        data,
    })
}

/// Moves labels drawn in the reference frame onto each requested band
/// using that band's `kind` transform. The reference band gets the labels
/// unchanged.
pub fn back_transfer_labels(
    rgb_labels: &LabelSet,
    registry: &TransformRegistry,
    reference: BandId,
    bands: &[BandId],
    kind: LabelKind,
) -> Result<BTreeMap<BandId, LabelSet>, ComposeError> {
    bands
        .iter()
        .map(|&band| {
            let d = registry
                .displacement(&RegistryKey::new(reference, band, kind))
                .ok_or(ComposeError::MissingTransform { reference, band, kind })?;
            Ok((band, translate_labels(rgb_labels, d)))
        })
        .collect()
}

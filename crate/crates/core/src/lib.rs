//! Translation recovery between the lenses of a multilens camera and
//! propagation of bounding-box and polygon labels across its bands.
//!
//! The pipeline runs in two steps. [`spectral::phase_correlate`] estimates
//! the displacement between two band images, then
//! [`refine::refine_displacement`] polishes it by maximizing label IoU on
//! annotated calibration images. The resulting displacements are kept in an
//! [`annotio::TransformRegistry`] and used to move labels between bands or
//! to build an artificial RGB image ([`compose`]).

pub mod annotio;
pub mod compose;
mod fsutil;
pub mod labels;
pub mod raster;
pub mod refine;
pub mod spectral;
pub mod synth;

pub use annotio::{BandId, RegistryKey, TransformRegistry};
pub use fsutil::atomic_write;
pub use labels::{LabelKind, LabelSet, Shape};
pub use raster::{BitDepth, Displacement, Raster, ShiftMode};

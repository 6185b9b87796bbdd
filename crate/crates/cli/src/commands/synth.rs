use std::path::PathBuf;

use lenslabel::raster::RasterFormat;
use lenslabel::synth::{write_dataset, SynthSpec};
use lenslabel::{BandId, BitDepth, Displacement};
use serde::Serialize;

use crate::args::SynthArgs;
use crate::error::{CliError, Result};
use crate::manifest::{RefineSettings, RunManifest};
use crate::report::{create_dir, table, to_json, write_json};

#[derive(Debug, Clone, Serialize)]
pub struct SynthReport {
    pub directory: PathBuf,
    pub manifest: PathBuf,
    pub images: usize,
    pub bands: Vec<BandId>,
    pub offsets: Vec<(BandId, Displacement)>,
}

/// Writes the dataset plus a `manifest.json` that splits it into leading
/// calibration images and trailing evaluation images.
pub fn run(args: &SynthArgs) -> Result<String> {
    let out = args
        .common
        .out
        .clone()
        .ok_or_else(|| CliError::validation("--out is required"))?;
    if args.calibration > args.images {
        return Err(CliError::validation(format!(
            "--calibration {} exceeds --images {}",
            args.calibration, args.images
        )));
    }
    let reference = BandId(args.reference);
    let mut offsets = std::collections::BTreeMap::new();
    for &(band, dx, dy) in &args.offsets.0 {
        if offsets.insert(BandId(band), Displacement::new(dx, dy)).is_some() {
            return Err(CliError::validation(format!("band {band} has two offsets")));
        }
    }
    let spec = SynthSpec {
        width: args.width,
        height: args.height,
        bit_depth: args.common.bit_depth.unwrap_or(BitDepth::Twelve),
        reference,
        offsets,
        images: args.images,
        objects: args.objects,
        min_size: args.min_size,
        max_size: args.max_size,
        noise: args.noise,
        mode: args.mode.into(),
        seed: args.common.seed.unwrap_or(0),
    };
    spec.validate()?;
    let format: RasterFormat = args.format.into();
    create_dir(&out)?;
    let truth = write_dataset(&spec, &out, format)?;

    let (calibration, evaluation) = truth.stems.split_at(args.calibration);
    let manifest = RunManifest {
        root: PathBuf::from("."),
        reference_band: reference,
        bands: spec.bands(),
        calibration: calibration.to_vec(),
        evaluation: evaluation.to_vec(),
        image_extension: format.extension().to_string(),
        rgb: default_rgb(&spec.bands(), reference),
        bit_depth: Some(spec.bit_depth),
        refine: RefineSettings::default(),
        output: PathBuf::from("results"),
    };
    let manifest_path = out.join("manifest.json");
    write_json(&manifest, &manifest_path)?;

    let report = SynthReport {
        directory: out,
        manifest: manifest_path,
        images: spec.images,
        bands: spec.bands(),
        offsets: spec.offsets.iter().map(|(&b, &d)| (b, d)).collect(),
    };
    if args.common.json {
        return Ok(to_json(&report));
    }
    let rows = report
        .offsets
        .iter()
        .map(|(b, d)| vec![b.to_string(), format!("{:.2} / {:.2}", d.dx, d.dy)])
        .collect::<Vec<_>>();
    Ok(format!(
        "{} images written to {}\n{}",
        report.images,
        report.directory.display(),
        table(&["Band", "Offset (px)"], &rows)
    ))
}

/// Bands 3, 2, 1 when present, otherwise the first three bands other
/// than the reference.
fn default_rgb(bands: &[BandId], reference: BandId) -> [BandId; 3] {
    let preferred = [BandId(3), BandId(2), BandId(1)];
    if preferred.iter().all(|b| bands.contains(b)) {
        return preferred;
    }
    let mut pick = bands.iter().copied().filter(|&b| b != reference).chain([reference]);
    let mut next = || pick.next().unwrap_or(reference);
    [next(), next(), next()]
}

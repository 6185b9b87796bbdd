use std::time::{Instant, SystemTime, UNIX_EPOCH};

use lenslabel::annotio::{read_labelme, save_registry, RegistryEntry};
use lenslabel::labels::LabelKind;
use lenslabel::raster::load_raster;
use lenslabel::refine::{refine_displacement, CalibrationPair, RefineConfig, StageRecord};
use lenslabel::spectral::PhaseCorrelator;
use lenslabel::{BandId, Displacement, LabelSet, Raster, RegistryKey, TransformRegistry};
use serde::Serialize;

use super::{selected_kinds, Context};
use crate::args::CalibrateArgs;
use crate::error::{CliError, Result};
use crate::manifest::require_files;
use crate::report::{percent, table, write_json};

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub reference: BandId,
    pub calibration_images: Vec<String>,
    pub timing_reps: u32,
    /// Time to transform the reference images once. Each target band is
    /// charged an equal share in its registration time.
    pub reference_ms: f64,
    pub rows: Vec<CalibrationRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationRow {
    pub band: BandId,
    pub kind: LabelKind,
    pub displacement: Displacement,
    pub mean_iou: f64,
    /// Median wall time of registration plus refinement.
    pub time_ms: f64,
    /// Median wall time of the phase correlations, shared by all kinds.
    pub registration_ms: f64,
    /// Median wall time of the refinement alone.
    pub refine_ms: f64,
    /// Phase correlation averaged over the calibration images.
    pub initial: Displacement,
    pub per_pair: Vec<PairEstimate>,
    pub evaluations: usize,
    pub trace: Vec<StageRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairEstimate {
    pub image: String,
    pub displacement: Displacement,
}

struct BandData {
    rasters: Vec<Raster>,
    labels: Vec<LabelSet>,
}

pub fn run(args: &CalibrateArgs) -> Result<String> {
    let ctx = Context::new(&args.common)?;
    let m = &ctx.manifest;
    let stems = &m.spec.calibration;
    if stems.is_empty() {
        return Err(CliError::validation("the calibration split is empty"));
    }
    let kinds = selected_kinds(&args.common);
    let configs = kinds
        .iter()
        .map(|&k| ctx.refine_config(k))
        .collect::<Result<Vec<RefineConfig>>>()?;

    let bands = m.bands();
    let images: Vec<_> = stems
        .iter()
        .flat_map(|s| bands.iter().flat_map(move |&b| [m.image_path(s, b), m.annotation_path(s, b)]))
        .collect();
    require_files(&images)?;

    let load = |band: BandId| -> Result<BandData> {
        let mut rasters = Vec::new();
        let mut labels = Vec::new();
        for s in stems {
            rasters.push(load_raster(m.image_path(s, band), ctx.bit_depth)?);
            labels.push(read_labelme(m.annotation_path(s, band))?);
        }
        Ok(BandData { rasters, labels })
    };
    let reference = load(m.reference())?;
    let dims = reference.rasters[0].dimensions();
    for (s, r) in stems.iter().zip(&reference.rasters) {
        if r.dimensions() != dims {
            return Err(inconsistent(s, m.reference(), r.dimensions(), dims));
        }
    }
    let correlator = PhaseCorrelator::new(dims.0, dims.1)?;
    let start = Instant::now();
    let spectra = reference
        .rasters
        .iter()
        .map(|r| correlator.reference(r))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let reference_ms = ms(start);
    let reference_labels = reference.labels;
    let reference_share = reference_ms / (bands.len() - 1).max(1) as f64;

    let mut registry = TransformRegistry::new();
    let mut rows = Vec::new();
    let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    for &band in &bands {
        if band == m.reference() {
            for &kind in &kinds {
                rows.push(identity_row(band, kind, stems));
            }
            continue;
        }
        let target = load(band)?;
        for (s, r) in stems.iter().zip(&target.rasters) {
            if r.dimensions() != dims {
                return Err(inconsistent(s, band, r.dimensions(), dims));
            }
        }
        let pairs: Vec<Vec<CalibrationPair>> = kinds
            .iter()
            .map(|&k| {
                reference_labels
                    .iter()
                    .zip(&target.labels)
                    .map(|(src, dst)| CalibrationPair {
                        source: src.filter_kind(k),
                        target: dst.filter_kind(k),
                    })
                    .collect()
            })
            .collect();

        let mut times: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
        let mut refine_times: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
        let mut registration_times = Vec::new();
        let mut outcome = None;
        for _ in 0..args.timing_reps {
            let start = Instant::now();
            let per_pair = spectra
                .iter()
                .zip(&target.rasters)
                .map(|(a, b)| correlator.correlate_with(a, b))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let registration_ms = ms(start) + reference_share;
            registration_times.push(registration_ms);
            let sum = per_pair.iter().fold(Displacement::ZERO, |acc, &d| acc + d);
            let initial = Displacement::new(sum.dx / per_pair.len() as f64, sum.dy / per_pair.len() as f64);
            let mut refined = Vec::new();
            for (i, cfg) in configs.iter().enumerate() {
                let t = Instant::now();
                let r = refine_displacement(initial, &pairs[i], cfg).map_err(|e| match e {
                    lenslabel::refine::RefineError::EmptyGroundTruth(j) | lenslabel::refine::RefineError::EmptySource(j) => {
                        CliError::validation(format!("image {} has no {} annotations on band {} or {}", stems[j], cfg.kind, m.reference(), band))
                    }
                    other => other.into(),
                })?;
                let refine_ms = ms(t);
                refine_times[i].push(refine_ms);
                times[i].push(registration_ms + refine_ms);
                refined.push(r);
            }
            outcome = Some((per_pair, initial, refined));
        }
        let (per_pair, initial, refined) = outcome.expect("at least one repetition");
        for (s, d) in stems.iter().zip(&per_pair) {
            log::info!("band {band}: {s} phase correlation {d}");
        }
        log::info!("band {band}: averaged estimate {initial}");
        let registration_ms = median(&mut registration_times);
        for (((&kind, r), t), rt) in kinds.iter().zip(refined).zip(&mut times).zip(&mut refine_times) {
            let time_ms = median(t);
            registry.insert(
                RegistryKey::new(m.reference(), band, kind),
                RegistryEntry {
                    displacement: r.displacement,
                    mean_iou: r.mean_iou,
                    elapsed_ms: time_ms,
                    calibration_images: stems.len(),
                    created_at,
                },
            )?;
            rows.push(CalibrationRow {
                band,
                kind,
                displacement: r.displacement,
                mean_iou: r.mean_iou,
                time_ms,
                registration_ms,
                refine_ms: median(rt),
                initial,
                per_pair: stems
                    .iter()
                    .zip(&per_pair)
                    .map(|(s, &d)| PairEstimate { image: s.clone(), displacement: d })
                    .collect(),
                evaluations: r.evaluations,
                trace: r.trace,
            });
        }
    }

    let registry_path = ctx.registry_path();
    if let Some(parent) = registry_path.parent() {
        crate::report::create_dir(parent)?;
    }
    save_registry(&registry, &registry_path)?;
    let report = CalibrationReport {
        reference: m.reference(),
        calibration_images: stems.clone(),
        timing_reps: args.timing_reps,
        reference_ms,
        rows,
    };
    crate::report::create_dir(&ctx.out)?;
    write_json(&report, &ctx.out.join("calibration_report.json"))?;
    Ok(if ctx.json { crate::report::to_json(&report) } else { render(&report, &kinds) })
}

fn identity_row(band: BandId, kind: LabelKind, stems: &[String]) -> CalibrationRow {
    CalibrationRow {
        band,
        kind,
        displacement: Displacement::ZERO,
        mean_iou: 1.0,
        time_ms: 0.0,
        registration_ms: 0.0,
        refine_ms: 0.0,
        initial: Displacement::ZERO,
        per_pair: stems
            .iter()
            .map(|s| PairEstimate { image: s.clone(), displacement: Displacement::ZERO })
            .collect(),
        evaluations: 0,
        trace: Vec::new(),
    }
}

fn inconsistent(stem: &str, band: BandId, found: (usize, usize), expected: (usize, usize)) -> CliError {
    CliError::validation(format!(
        "image {stem} band {band} is {}x{}, expected {}x{}",
        found.0, found.1, expected.0, expected.1
    ))
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn render(report: &CalibrationReport, kinds: &[LabelKind]) -> String {
    let mut out = String::new();
    for &kind in kinds {
        let title = match kind {
            LabelKind::BoundingBox => "Bounding boxes",
            LabelKind::Polygon => "Masks",
        };
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| {
                vec![
                    r.band.to_string(),
                    format!("{:.2} / {:.2}", r.displacement.dx, r.displacement.dy),
                    percent(r.mean_iou),
                    format!("{:.0}", r.time_ms),
                ]
            })
            .collect();
        out.push_str(&format!("{title} (reference band {})\n", report.reference));
        out.push_str(&table(&["Band", "Transform (px)", "IoU (%)", "Time (ms)"], &rows));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [5.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}

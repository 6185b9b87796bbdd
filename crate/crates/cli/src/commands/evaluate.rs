use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use lenslabel::annotio::read_labelme;
use lenslabel::labels::{match_and_score, LabelKind};
use lenslabel::BandId;
use serde::Serialize;

use super::selected_kinds;
use crate::args::EvaluateArgs;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;
use crate::report::{create_dir, percent, table, to_json, write_json};

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub supersample: u32,
    pub files: Vec<FileScore>,
    pub per_band: Vec<Aggregate>,
    pub overall: Vec<Aggregate>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileScore {
    pub file: String,
    pub band: Option<BandId>,
    pub kind: LabelKind,
    pub mean_iou: f64,
    pub matched: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

/// Pooled score: summed matched IoU over summed `max(#pred, #gt)`.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub band: Option<BandId>,
    pub kind: LabelKind,
    pub files: usize,
    pub mean_iou: f64,
}

pub fn run(args: &EvaluateArgs) -> Result<String> {
    let common = &args.common;
    let manifest = common.manifest.as_deref().map(Manifest::load).transpose()?;
    let gt_dir = match (&args.gt, &manifest) {
        (Some(g), _) => g.clone(),
        (None, Some(m)) => m.root.clone(),
        (None, None) => return Err(CliError::validation("--gt or --manifest is required")),
    };
    let names = file_set(&args.pred, &gt_dir, manifest.as_ref())?;
    let supersample = common
        .supersample
        .or(manifest.as_ref().and_then(|m| m.spec.refine.supersample))
        .unwrap_or(8);
    if supersample == 0 {
        return Err(CliError::validation("--supersample must be at least 1"));
    }
    let kinds = selected_kinds(common);

    let start = Instant::now();
    let mut files = Vec::new();
    for name in &names {
        let pred = read_labelme(args.pred.join(name))?;
        let gt = read_labelme(gt_dir.join(name))?;
        for &kind in &kinds {
            let (p, g) = (pred.filter_kind(kind), gt.filter_kind(kind));
            if p.is_empty() && g.is_empty() {
                continue;
            }
            let r = match_and_score(&p, &g, supersample)?;
            files.push(FileScore {
                file: name.clone(),
                band: band_of(name),
                kind,
                mean_iou: r.mean_iou,
                matched: r.pairs.len(),
                predicted: p.len(),
                ground_truth: g.len(),
            });
        }
    }
    let elapsed_ms = start.elapsed().as_secs_f64() * 1000.0;
    let report = EvaluationReport {
        supersample,
        per_band: aggregate(&files, true),
        overall: aggregate(&files, false),
        files,
        elapsed_ms,
    };
    if let Some(out) = &common.out {
        create_dir(out)?;
        write_json(&report, &out.join("evaluation_report.json"))?;
    }
    Ok(if common.json { to_json(&report) } else { render(&report) })
}

fn band_of(name: &str) -> Option<BandId> {
    let rest = name.rsplit_once("__band")?.1;
    rest.strip_suffix(".json")?.parse().ok().map(BandId)
}

fn is_band_annotation(name: &str) -> bool {
    band_of(name).is_some()
}

fn list(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::validation(format!("cannot list {}: {e}", dir.display())))?;
    let mut out = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Runtime(e.to_string()))?;
        if let Some(name) = entry.file_name().to_str() {
            if is_band_annotation(name) && entry.path().is_file() {
                out.insert(name.to_string());
            }
        }
    }
    Ok(out)
}

/// With a manifest: every evaluation image on every band, present on both
/// sides. Without: all `<stem>__band<k>.json` files, identical on both sides.
fn file_set(pred: &Path, gt: &Path, manifest: Option<&Manifest>) -> Result<Vec<String>> {
    let names: Vec<String> = match manifest {
        Some(m) => {
            let names: Vec<String> = m
                .spec
                .evaluation
                .iter()
                .flat_map(|s| m.bands().into_iter().map(move |b| lenslabel::synth::band_file_name(s, b, "json")))
                .collect();
            for dir in [pred, gt] {
                if let Some(missing) = names.iter().find(|n| !dir.join(n).is_file()) {
                    return Err(CliError::validation(format!("file sets differ: {} is missing", dir.join(missing).display())));
                }
            }
            names
        }
        None => {
            let (p, g) = (list(pred)?, list(gt)?);
            if let Some(extra) = p.symmetric_difference(&g).next() {
                return Err(CliError::validation(format!("file sets differ: {extra} is not on both sides")));
            }
            p.into_iter().collect()
        }
    };
    if names.is_empty() {
        return Err(CliError::validation("no annotation files to evaluate"));
    }
    Ok(names)
}

fn aggregate(files: &[FileScore], by_band: bool) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(LabelKind, Option<BandId>), (usize, f64, usize)> = BTreeMap::new();
    for f in files {
        let band = if by_band { f.band } else { None };
        let g = groups.entry((f.kind, band)).or_default();
        let denom = f.predicted.max(f.ground_truth);
        g.0 += 1;
        g.1 += f.mean_iou * denom as f64;
        g.2 += denom;
    }
    groups
        .into_iter()
        .map(|((kind, band), (n, sum, denom))| Aggregate {
            band,
            kind,
            files: n,
            mean_iou: sum / denom as f64,
        })
        .collect()
}

fn render(r: &EvaluationReport) -> String {
    let mut rows: Vec<Vec<String>> = r
        .per_band
        .iter()
        .map(|a| {
            vec![
                a.band.map_or("-".into(), |b| b.to_string()),
                a.kind.to_string(),
                a.files.to_string(),
                percent(a.mean_iou),
            ]
        })
        .collect();
    rows.extend(
        r.overall
            .iter()
            .map(|a| vec!["all".into(), a.kind.to_string(), a.files.to_string(), percent(a.mean_iou)]),
    );
    let mut out = table(&["Band", "Kind", "Files", "IoU (%)"], &rows);
    out.push_str(&format!("Time (ms): {:.1}\n", r.elapsed_ms));
    out
}

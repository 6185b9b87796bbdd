pub mod calibrate;
pub mod compose;
pub mod evaluate;
pub mod synth;
pub mod transfer;

use std::collections::BTreeMap;
use std::path::PathBuf;

use lenslabel::annotio::load_registry;
use lenslabel::compose::back_transfer_labels;
use lenslabel::labels::LabelKind;
use lenslabel::refine::RefineConfig;
use lenslabel::{BandId, BitDepth, LabelSet, TransformRegistry};

use crate::args::Common;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

/// Manifest and paths resolved from the shared flags.
pub struct Context {
    pub manifest: Manifest,
    pub out: PathBuf,
    pub bit_depth: Option<BitDepth>,
    pub json: bool,
    registry: Option<PathBuf>,
    common: Common,
}

impl Context {
    pub fn new(common: &Common) -> Result<Self> {
        let path = common
            .manifest
            .as_ref()
            .ok_or_else(|| CliError::validation("--manifest is required"))?;
        let manifest = Manifest::load(path)?;
        Ok(Self {
            out: common.out.clone().unwrap_or_else(|| manifest.output.clone()),
            bit_depth: common.bit_depth.or(manifest.spec.bit_depth),
            json: common.json,
            registry: common.registry.clone(),
            manifest,
            common: common.clone(),
        })
    }

    /// `--registry`, or `registry.json` in the output directory.
    pub fn registry_path(&self) -> PathBuf {
        self.registry.clone().unwrap_or_else(|| self.out.join("registry.json"))
    }

    pub fn load_registry(&self) -> Result<TransformRegistry> {
        let path = self.registry_path();
        if !path.is_file() {
            return Err(CliError::validation(format!("missing registry {}", path.display())));
        }
        Ok(load_registry(path)?)
    }

    pub fn refine_config(&self, kind: LabelKind) -> Result<RefineConfig> {
        self.manifest.refine_config(
            kind,
            self.common.refine_n,
            self.common.scales.clone().map(|s| s.0),
            self.common.supersample,
        )
    }
}

/// The `--label-kind` selection, or both kinds.
pub fn selected_kinds(common: &Common) -> Vec<LabelKind> {
    match common.label_kind {
        Some(k) => vec![k.into()],
        None => vec![LabelKind::BoundingBox, LabelKind::Polygon],
    }
}

/// Moves `labels` from the reference frame onto each band, every shape by
/// the transform of its own kind. Shape order is kept.
pub fn move_labels(
    labels: &LabelSet,
    registry: &TransformRegistry,
    reference: BandId,
    bands: &[BandId],
    kinds: &[LabelKind],
) -> Result<BTreeMap<BandId, LabelSet>> {
    let mut moved: Vec<(LabelKind, BTreeMap<BandId, LabelSet>)> = Vec::new();
    for &kind in kinds {
        let subset = labels.filter_kind(kind);
        if subset.is_empty() {
            continue;
        }
        moved.push((kind, back_transfer_labels(&subset, registry, reference, bands, kind)?));
    }
    let mut out = BTreeMap::new();
    for &band in bands {
        let mut next: BTreeMap<LabelKind, std::vec::IntoIter<lenslabel::Shape>> = moved
            .iter()
            .map(|(k, per_band)| (*k, per_band[&band].shapes.clone().into_iter()))
            .collect();
        let shapes = labels
            .shapes
            .iter()
            .filter_map(|s| next.get_mut(&s.kind()).and_then(Iterator::next))
            .collect();
        out.insert(band, LabelSet::new(labels.image_width, labels.image_height, shapes));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lenslabel::annotio::RegistryEntry;
    use lenslabel::labels::Point;
    use lenslabel::{Displacement, RegistryKey, Shape};

    #[test]
    fn move_labels_uses_each_kind_transform_and_keeps_order() {
        let mut reg = TransformRegistry::new();
        for (kind, dx) in [(LabelKind::BoundingBox, 1.0), (LabelKind::Polygon, 2.0)] {
            let entry = RegistryEntry {
                displacement: Displacement::new(dx, 0.0),
                mean_iou: 1.0,
                elapsed_ms: 0.0,
                calibration_images: 1,
                created_at: 0,
            };
            reg.insert(RegistryKey::new(BandId(5), BandId(1), kind), entry).unwrap();
        }
        let tri = vec![Point::new(0.0, 0.0), Point::new(4.0, 0.0), Point::new(0.0, 4.0)];
        let ls = LabelSet::new(
            10,
            10,
            vec![
                Shape::polygon("m", tri).unwrap(),
                Shape::bounding_box("b", Point::new(0.0, 0.0), Point::new(1.0, 1.0)).unwrap(),
            ],
        );
        let kinds = [LabelKind::BoundingBox, LabelKind::Polygon];
        let out = move_labels(&ls, &reg, BandId(5), &[BandId(1), BandId(5)], &kinds).unwrap();
        let b1 = &out[&BandId(1)];
        assert_eq!(b1.shapes[0].name, "m");
        assert_eq!(b1.shapes[0].geometry.points()[0], Point::new(2.0, 0.0));
        assert_eq!(b1.shapes[1].geometry.points()[0], Point::new(1.0, 0.0));
        assert_eq!(out[&BandId(5)], ls);

        let only_bb = move_labels(&ls, &reg, BandId(5), &[BandId(1)], &[LabelKind::BoundingBox]).unwrap();
        assert_eq!(only_bb[&BandId(1)].len(), 1);
        assert!(move_labels(&ls, &reg, BandId(5), &[BandId(2)], &kinds).is_err());
    }
}

//! Run manifest: where the band images and annotations live and how the
//! images are split between calibration and evaluation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lenslabel::labels::LabelKind;
use lenslabel::refine::RefineConfig;
use lenslabel::synth::band_file_name;
use lenslabel::{BandId, BitDepth};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Directory with `<stem>__band<k>.<ext>` images and `.json` annotations,
    /// relative to the manifest file.
    pub root: PathBuf,
    pub reference_band: BandId,
    pub bands: Vec<BandId>,
    /// Image stems used to estimate the transforms.
    pub calibration: Vec<String>,
    /// Image stems the transforms are applied to.
    pub evaluation: Vec<String>,
    #[serde(default = "default_extension")]
    pub image_extension: String,
    /// Bands shown as red, green and blue.
    #[serde(default = "default_rgb")]
    pub rgb: [BandId; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_depth: Option<BitDepth>,
    #[serde(default)]
    pub refine: RefineSettings,
    /// Output directory, relative to the manifest file.
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersample: Option<u32>,
}

fn default_extension() -> String {
    "png".into()
}

fn default_rgb() -> [BandId; 3] {
    [BandId(3), BandId(2), BandId(1)]
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// A validated manifest with its paths resolved.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub spec: RunManifest,
    pub root: PathBuf,
    pub output: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read manifest {}: {e}", path.display())))?;
        let spec: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::new(spec, base)
    }

    pub fn new(spec: RunManifest, base: &Path) -> Result<Self> {
        validate(&spec)?;
        Ok(Self {
            root: base.join(&spec.root),
            output: base.join(&spec.output),
            spec,
        })
    }

    pub fn reference(&self) -> BandId {
        self.spec.reference_band
    }

    /// All bands in ascending order.
    pub fn bands(&self) -> Vec<BandId> {
        let mut b = self.spec.bands.clone();
        b.sort();
        b
    }

    pub fn image_name(&self, stem: &str, band: BandId) -> String {
        band_file_name(stem, band, &self.spec.image_extension)
    }

    pub fn image_path(&self, stem: &str, band: BandId) -> PathBuf {
        self.root.join(self.image_name(stem, band))
    }

    pub fn annotation_path(&self, stem: &str, band: BandId) -> PathBuf {
        self.root.join(band_file_name(stem, band, "json"))
    }

    /// Refinement settings: flags first, then the manifest, then defaults.
    pub fn refine_config(
        &self,
        kind: LabelKind,
        steps: Option<u32>,
        scales: Option<Vec<f64>>,
        supersample: Option<u32>,
    ) -> Result<RefineConfig> {
        let d = RefineConfig::default();
        let r = &self.spec.refine;
        let cfg = RefineConfig {
            steps: steps.or(r.steps).unwrap_or(d.steps),
            scales: scales.or_else(|| r.scales.clone()).unwrap_or(d.scales),
            kind,
            supersample: supersample.or(r.supersample).unwrap_or(d.supersample),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn validate(m: &RunManifest) -> Result<()> {
    let bad = |msg: String| Err(CliError::Validation(format!("manifest: {msg}")));
    if m.bands.is_empty() {
        return bad("no bands listed".into());
    }
    let bands: BTreeSet<BandId> = m.bands.iter().copied().collect();
    if bands.len() != m.bands.len() {
        return bad("bands repeat".into());
    }
    if !bands.contains(&m.reference_band) {
        return bad(format!("reference band {} is not among the bands", m.reference_band));
    }
    for b in m.rgb {
        if !bands.contains(&b) {
            return bad(format!("rgb band {b} is not among the bands"));
        }
    }
    let mut seen = BTreeSet::new();
    for stem in m.calibration.iter().chain(&m.evaluation) {
        if stem.is_empty() || stem.contains(['/', '\\']) {
            return bad(format!("invalid image stem {stem:?}"));
        }
        if !seen.insert(stem.as_str()) {
            return bad(format!("image {stem:?} is listed twice or in both splits"));
        }
    }
    if m.image_extension.is_empty() {
        return bad("image_extension is empty".into());
    }
    Ok(())
}

/// Fails with a validation error naming the first missing file.
pub fn require_files<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::validation(format!("missing file {}", p.display())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunManifest {
        serde_json::from_str(
            r#"{"root": "data", "reference_band": 5, "bands": [1, 2, 3, 4, 5],
                "calibration": ["a", "b"], "evaluation": ["c"]}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_and_paths() {
        let m = Manifest::new(sample(), Path::new("/runs")).unwrap();
        assert_eq!(m.spec.rgb, [BandId(3), BandId(2), BandId(1)]);
        assert_eq!(m.image_path("a", BandId(2)), PathBuf::from("/runs/data/a__band2.png"));
        assert_eq!(m.annotation_path("c", BandId(5)), PathBuf::from("/runs/data/c__band5.json"));
        assert_eq!(m.output, PathBuf::from("/runs/results"));
    }

    #[test]
    fn splits_must_be_disjoint() {
        let mut s = sample();
        s.evaluation.push("a".into());
        assert!(matches!(Manifest::new(s, Path::new(".")), Err(CliError::Validation(_))));
    }

    #[test]
    fn reference_must_be_a_band() {
        let mut s = sample();
        s.reference_band = BandId(9);
        assert!(Manifest::new(s, Path::new(".")).is_err());
        let mut s = sample();
        s.rgb = [BandId(1), BandId(2), BandId(7)];
        assert!(Manifest::new(s, Path::new(".")).is_err());
    }

    #[test]
    fn refine_flags_override_manifest() {
        let mut s = sample();
        s.refine.steps = Some(3);
        s.refine.supersample = Some(4);
        let m = Manifest::new(s, Path::new(".")).unwrap();
        let cfg = m.refine_config(LabelKind::Polygon, None, Some(vec![1.0, 0.5]), Some(16)).unwrap();
        assert_eq!((cfg.steps, cfg.supersample, cfg.scales.len()), (3, 16, 2));
        assert!(m.refine_config(LabelKind::Polygon, None, Some(vec![0.1, 1.0]), None).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r: std::result::Result<RunManifest, _> =
            serde_json::from_str(r#"{"root": ".", "reference_band": 1, "bands": [1], "calibration": [], "evaluation": [], "colour": 1}"#);
        assert!(r.is_err());
    }
}

//! LabelMe annotation documents and the persisted transform registry.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::fsutil::atomic_write;
use crate::labels::{BoundingBox, Geometry, LabelError, LabelKind, LabelSet, Point, Polygon, Shape};
use crate::raster::Displacement;

/// Version string written into emitted LabelMe documents.
pub const LABELME_VERSION: &str = "5.4.1";

/// Registry file format version understood by [`load_registry`].
pub const REGISTRY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported shape_type {0:?}")]
    UnsupportedShapeType(String),
    #[error("shape {index} ({label}): {reason}")]
    InvalidShape {
        index: usize,
        label: String,
        reason: String,
    },
    #[error("registry schema_version {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("duplicate registry key {0}")]
    DuplicateKey(String),
    #[error("invalid registry key {0:?}")]
    InvalidKey(String),
    #[error("invalid registry entry {key}: {reason}")]
    InvalidEntry { key: String, reason: String },
}

fn io_error(path: &Path, source: std::io::Error) -> AnnotationError {
    AnnotationError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct LabelMeIn {
    shapes: Vec<ShapeIn>,
    image_width: usize,
    image_height: usize,
}

#[derive(Deserialize)]
struct ShapeIn {
    label: String,
    points: Vec<[f64; 2]>,
    shape_type: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct LabelMeOut<'a> {
    version: &'static str,
    flags: BTreeMap<String, bool>,
    shapes: Vec<ShapeOut<'a>>,
    image_path: &'a str,
    image_data: Option<()>,
    image_height: usize,
    image_width: usize,
}

#[derive(Serialize)]
struct ShapeOut<'a> {
    label: &'a str,
    points: Vec<[f64; 2]>,
    group_id: Option<u32>,
    shape_type: &'static str,
    flags: BTreeMap<String, bool>,
}

/// Parses a LabelMe document. Rectangles become bounding boxes with ordered
/// corners and polygons keep their vertex order; other shape types are
/// rejected. Unknown fields are ignored.
pub fn parse_labelme(document: &str) -> Result<LabelSet, AnnotationError> {
    let doc: LabelMeIn = serde_json::from_str(document)?;
    let mut shapes = Vec::with_capacity(doc.shapes.len());
    for (index, s) in doc.shapes.into_iter().enumerate() {
        let invalid = |reason: String| AnnotationError::InvalidShape {
            index,
            label: s.label.clone(),
            reason,
        };
        let points: Vec<Point> = s.points.iter().map(|&[x, y]| Point::new(x, y)).collect();
        let geometry = match s.shape_type.as_str() {
            "rectangle" => {
                if points.len() != 2 {
                    return Err(invalid(format!("rectangle needs exactly 2 points, got {}", points.len())));
                }
                Geometry::BoundingBox(
                    BoundingBox::from_corners(points[0], points[1]).map_err(|e| invalid(e.to_string()))?,
                )
            }
            "polygon" => Geometry::Polygon(Polygon::new(points).map_err(|e: LabelError| invalid(e.to_string()))?),
            other => return Err(AnnotationError::UnsupportedShapeType(other.to_string())),
        };
        shapes.push(Shape {
            name: s.label,
            geometry,
        });
    }
    Ok(LabelSet::new(doc.image_width, doc.image_height, shapes))
}

/// Serializes a label set as a LabelMe document. Output is deterministic
/// and floats are written in shortest round-trip form.
pub fn emit_labelme(ls: &LabelSet, image_path: &str) -> String {
    let shapes = ls
        .shapes
        .iter()
        .map(|s| ShapeOut {
            label: &s.name,
            points: s.geometry.points().iter().map(|p| [p.x, p.y]).collect(),
            group_id: None,
            shape_type: match s.kind() {
                LabelKind::BoundingBox => "rectangle",
                LabelKind::Polygon => "polygon",
            },
            flags: BTreeMap::new(),
        })
        .collect();
    let doc = LabelMeOut {
        version: LABELME_VERSION,
        flags: BTreeMap::new(),
        shapes,
        image_path,
        image_data: None,
        image_height: ls.image_height,
        image_width: ls.image_width,
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("label documents always serialize");
    out.push('\n');
    out
}

pub fn read_labelme(path: impl AsRef<Path>) -> Result<LabelSet, AnnotationError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_labelme(&text)
}

pub fn write_labelme(ls: &LabelSet, image_path: &str, path: impl AsRef<Path>) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    atomic_write(path, emit_labelme(ls, image_path).as_bytes()).map_err(|e| io_error(path, e))
}

/// Identifier of a camera band (lens).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BandId(pub u32);

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `(source band, target band, label kind)`; written as `"5→1/bb"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegistryKey {
    pub source: BandId,
    pub target: BandId,
    pub kind: LabelKind,
}

impl RegistryKey {
    pub fn new(source: BandId, target: BandId, kind: LabelKind) -> Self {
        Self { source, target, kind }
    }
}

impl fmt::Display for RegistryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}→{}/{}", self.source, self.target, self.kind)
    }
}

impl FromStr for RegistryKey {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AnnotationError::InvalidKey(s.to_string());
        let (bands, kind) = s.split_once('/').ok_or_else(bad)?;
        let (src, dst) = bands.split_once('→').ok_or_else(bad)?;
        Ok(Self {
            source: BandId(src.parse().map_err(|_| bad())?),
            target: BandId(dst.parse().map_err(|_| bad())?),
            kind: LabelKind::parse(kind).ok_or_else(bad)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub displacement: Displacement,
    pub mean_iou: f64,
    pub elapsed_ms: f64,
    pub calibration_images: usize,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl RegistryEntry {
    fn check(&self) -> Result<(), String> {
        if !self.displacement.is_finite() {
            return Err("displacement is not finite".into());
        }
        if !(0.0..=1.0).contains(&self.mean_iou) {
            return Err(format!("mean_iou {} outside [0, 1]", self.mean_iou));
        }
        Ok(())
    }
}

/// Refined displacements between bands, one per key.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransformRegistry {
    entries: BTreeMap<RegistryKey, RegistryEntry>,
}

impl TransformRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `entry`, replacing any previous entry for `key`.
    pub fn insert(&mut self, key: RegistryKey, entry: RegistryEntry) -> Result<Option<RegistryEntry>, AnnotationError> {
        entry.check().map_err(|reason| AnnotationError::InvalidEntry {
            key: key.to_string(),
            reason,
        })?;
        Ok(self.entries.insert(key, entry))
    }

    pub fn get(&self, key: &RegistryKey) -> Option<&RegistryEntry> {
        self.entries.get(key)
    }

    /// Displacement for `key`; a band maps to itself by the identity even
    /// without a stored entry.
    pub fn displacement(&self, key: &RegistryKey) -> Option<Displacement> {
        if key.source == key.target {
            return Some(Displacement::ZERO);
        }
        self.entries.get(key).map(|e| e.displacement)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RegistryKey, &RegistryEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema_version: u32,
            entries: BTreeMap<String, &'a RegistryEntry>,
        }
        let doc = Doc {
            schema_version: REGISTRY_SCHEMA_VERSION,
            entries: self.entries.iter().map(|(k, v)| (k.to_string(), v)).collect(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("registry always serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, AnnotationError> {
        #[derive(Deserialize)]
        struct Header {
            schema_version: u32,
        }
        #[derive(Deserialize)]
        struct Doc {
            entries: EntryList,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.schema_version != REGISTRY_SCHEMA_VERSION {
            return Err(AnnotationError::SchemaMismatch {
                found: header.schema_version,
                expected: REGISTRY_SCHEMA_VERSION,
            });
        }
        let doc: Doc = serde_json::from_str(text)?;
        let mut registry = TransformRegistry::new();
        for (raw, entry) in doc.entries.0 {
            let key: RegistryKey = raw.parse()?;
            if registry.entries.contains_key(&key) {
                return Err(AnnotationError::DuplicateKey(raw));
            }
            registry.insert(key, entry)?;
        }
        Ok(registry)
    }
}

/// JSON object read as an ordered list so repeated keys are visible.
struct EntryList(Vec<(String, RegistryEntry)>);

impl<'de> Deserialize<'de> for EntryList {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ListVisitor;

        impl<'de> Visitor<'de> for ListVisitor {
            type Value = EntryList;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of registry entries")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<EntryList, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry()? {
                    out.push((k, v));
                }
                Ok(EntryList(out))
            }
        }

        deserializer.deserialize_map(ListVisitor)
    }
}

pub fn save_registry(r: &TransformRegistry, path: impl AsRef<Path>) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    atomic_write(path, r.to_json().as_bytes()).map_err(|e| io_error(path, e))
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<TransformRegistry, AnnotationError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    TransformRegistry::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(shapes: &str) -> String {
        format!(r#"{{"version": "5.2.1", "flags": {{}}, "shapes": [{shapes}], "imagePath": "a.png", "imageData": null, "imageWidth": 1280, "imageHeight": 960, "extra": 3}}"#)
    }

    #[test]
    fn parse_empty() {
        let ls = parse_labelme(&doc("")).unwrap();
        assert_eq!((ls.image_width, ls.image_height), (1280, 960));
        assert!(ls.is_empty());
    }

    #[test]
    fn parse_normalizes_rectangle_corners() {
        let ls = parse_labelme(&doc(
            r#"{"label": "pill", "points": [[20, 30], [10, 10]], "group_id": null, "shape_type": "rectangle", "flags": {}}"#,
        ))
        .unwrap();
        assert_eq!(
            ls.shapes[0].geometry.points(),
            vec![Point::new(10.0, 10.0), Point::new(20.0, 30.0)]
        );
        assert_eq!(ls.shapes[0].name, "pill");
    }

    #[test]
    fn parse_rejections() {
        let err = parse_labelme(&doc(r#"{"label": "c", "points": [[1, 1], [2, 2]], "shape_type": "circle"}"#))
            .unwrap_err();
        assert!(err.to_string().contains("unsupported shape_type"));

        for bad in [
            r#"{"label": "r", "points": [[1, 1]], "shape_type": "rectangle"}"#,
            r#"{"label": "r", "points": [[1, 1], [1, 5]], "shape_type": "rectangle"}"#,
            r#"{"label": "p", "points": [[1, 1], [2, 2]], "shape_type": "polygon"}"#,
        ] {
            assert!(matches!(parse_labelme(&doc(bad)), Err(AnnotationError::InvalidShape { .. })), "{bad}");
        }
        assert!(matches!(
            parse_labelme(&doc(r#"{"points": [[1, 1], [2, 2]], "shape_type": "rectangle"}"#)),
            Err(AnnotationError::Json(_))
        ));
        assert!(matches!(parse_labelme("{not json"), Err(AnnotationError::Json(_))));
        assert!(matches!(parse_labelme(r#"{"shapes": []}"#), Err(AnnotationError::Json(_))));
    }

    #[test]
    fn emit_examples() {
        let empty = LabelSet::new(640, 480, vec![]);
        let text = emit_labelme(&empty, "x.png");
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["shapes"], serde_json::json!([]));
        assert_eq!(v["imageWidth"], 640);
        assert_eq!(v["imageHeight"], 480);
        assert!(v["imageData"].is_null());

        let ls = LabelSet::new(
            1280,
            960,
            vec![Shape::bounding_box("pill", Point::new(48.0, 147.0), Point::new(68.0, 177.0)).unwrap()],
        );
        let v: serde_json::Value = serde_json::from_str(&emit_labelme(&ls, "b1.png")).unwrap();
        let shape = &v["shapes"][0];
        assert_eq!(shape["shape_type"], "rectangle");
        assert_eq!(shape["points"], serde_json::json!([[48.0, 147.0], [68.0, 177.0]]));
        assert!(shape["group_id"].is_null());
        assert_eq!(shape["flags"], serde_json::json!({}));
        assert_eq!(v["imagePath"], "b1.png");
        assert_eq!(parse_labelme(&emit_labelme(&ls, "b1.png")).unwrap(), ls);
        assert_eq!(emit_labelme(&ls, "b1.png"), emit_labelme(&ls.clone(), "b1.png"));
    }

    fn entry(dx: f64, dy: f64, iou: f64) -> RegistryEntry {
        RegistryEntry {
            displacement: Displacement::new(dx, dy),
            mean_iou: iou,
            elapsed_ms: 66.31,
            calibration_images: 12,
            created_at: 1_700_000_000,
        }
    }

    #[test]
    fn registry_round_trip_is_bit_exact() {
        let mut r = TransformRegistry::new();
        let key = RegistryKey::new(BandId(5), BandId(1), LabelKind::BoundingBox);
        r.insert(key, entry(-52.0, 47.0, 0.9858)).unwrap();
        r.insert(
            RegistryKey::new(BandId(5), BandId(1), LabelKind::Polygon),
            entry(-52.05, 47.2, 0.9749),
        )
        .unwrap();
        r.insert(
            RegistryKey::new(BandId(5), BandId(2), LabelKind::Polygon),
            entry(0.1 + 0.2, -1.0 / 3.0, 0.9436),
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        save_registry(&r, &path).unwrap();
        let back = load_registry(&path).unwrap();
        assert_eq!(back, r);
        let e = back.get(&key).unwrap();
        assert_eq!(e.mean_iou.to_bits(), 0.9858f64.to_bits());
        let odd = back
            .get(&RegistryKey::new(BandId(5), BandId(2), LabelKind::Polygon))
            .unwrap();
        assert_eq!(odd.displacement.dx.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(odd.displacement.dy.to_bits(), (-1.0f64 / 3.0).to_bits());
        assert!(std::fs::read_to_string(&path).unwrap().contains("\"5→1/bb\""));
    }

    #[test]
    fn registry_identity_without_entry() {
        let r = TransformRegistry::new();
        assert_eq!(
            r.displacement(&RegistryKey::new(BandId(3), BandId(3), LabelKind::Polygon)),
            Some(Displacement::ZERO)
        );
        assert_eq!(r.displacement(&RegistryKey::new(BandId(5), BandId(3), LabelKind::Polygon)), None);
    }

    #[test]
    fn registry_rejects_duplicates_and_bad_schema() {
        let text = r#"{"schema_version": 1, "entries": {
            "5→1/bb": {"displacement": {"dx": 1.0, "dy": 2.0}, "mean_iou": 0.5, "elapsed_ms": 1.0, "calibration_images": 1, "created_at": 0},
            "5→1/bb": {"displacement": {"dx": 3.0, "dy": 4.0}, "mean_iou": 0.5, "elapsed_ms": 1.0, "calibration_images": 1, "created_at": 0}
        }}"#;
        assert!(matches!(TransformRegistry::from_json(text), Err(AnnotationError::DuplicateKey(_))));

        let text = r#"{"schema_version": 2, "entries": {}}"#;
        assert!(matches!(
            TransformRegistry::from_json(text),
            Err(AnnotationError::SchemaMismatch { found: 2, .. })
        ));

        let text = r#"{"schema_version": 1, "entries": {"5-1/bb": {"displacement": {"dx": 1.0, "dy": 2.0}, "mean_iou": 0.5, "elapsed_ms": 1.0, "calibration_images": 1, "created_at": 0}}}"#;
        assert!(matches!(TransformRegistry::from_json(text), Err(AnnotationError::InvalidKey(_))));

        assert!(matches!(load_registry("/nonexistent/r.json"), Err(AnnotationError::Io { .. })));
    }

    #[test]
    fn registry_rejects_invalid_entries() {
        let mut r = TransformRegistry::new();
        let key = RegistryKey::new(BandId(5), BandId(1), LabelKind::BoundingBox);
        assert!(r.insert(key, entry(f64::INFINITY, 0.0, 0.5)).is_err());
        assert!(r.insert(key, entry(0.0, 0.0, 1.5)).is_err());
        assert!(r.is_empty());
    }

    #[test]
    fn key_parsing() {
        let key: RegistryKey = "5→12/mask".parse().unwrap();
        assert_eq!(key, RegistryKey::new(BandId(5), BandId(12), LabelKind::Polygon));
        assert_eq!(key.to_string(), "5→12/mask");
        for bad in ["5→1", "5/bb", "a→1/bb", "5→1/circle"] {
            assert!(bad.parse::<RegistryKey>().is_err(), "{bad}");
        }
    }
}

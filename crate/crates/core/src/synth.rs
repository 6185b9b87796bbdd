//! Synthetic multiband scenes with exact ground truth.
//!
//! A reference scene of pill-shaped objects on a textured background is
//! rendered once per image. Every other band is that scene shifted by the
//! band's offset, with its own gain and additive Gaussian noise. Labels are
//! the reference labels translated by the same offset, so they are exact.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotio::{write_labelme, AnnotationError, BandId};
use crate::fsutil::atomic_write;
use crate::labels::{translate_labels, LabelSet, Point, Polygon, Shape};
use crate::raster::{save_raster, shift_raster, BitDepth, Displacement, Raster, RasterError, RasterFormat, ShiftMode};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic dataset spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {wanted} objects without overlap (placed {placed})")]
    Crowded { wanted: usize, placed: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub bit_depth: BitDepth,
    pub reference: BandId,
    /// Offset of every non-reference band from the reference band.
    pub offsets: BTreeMap<BandId, Displacement>,
    pub images: usize,
    pub objects: usize,
    /// Object size range in pixels (longest side).
    pub min_size: f64,
    pub max_size: f64,
    /// Noise standard deviation as a fraction of the dynamic range.
    pub noise: f64,
    pub mode: ShiftMode,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let offsets = [(1, -52.0, 47.0), (2, 54.0, 46.0), (3, 53.0, -23.0), (4, -52.0, -19.0)]
            .into_iter()
            .map(|(b, dx, dy)| (BandId(b), Displacement::new(dx, dy)))
            .collect();
        Self {
            width: 1280,
            height: 960,
            bit_depth: BitDepth::Twelve,
            reference: BandId(5),
            offsets,
            images: 15,
            objects: 16,
            min_size: 8.0,
            max_size: 22.0,
            noise: 0.005,
            mode: ShiftMode::CropFill,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.width < 16 || self.height < 16 {
            return bad(format!("image must be at least 16x16, got {}x{}", self.width, self.height));
        }
        if self.images == 0 {
            return bad("at least one image is required".into());
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size.is_finite()) {
            return bad(format!("invalid size range {}..{}", self.min_size, self.max_size));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be non-negative", self.noise));
        }
        if self.offsets.contains_key(&self.reference) {
            return bad(format!("reference band {} cannot have an offset", self.reference));
        }
        let limit = self.width.min(self.height) as f64 / 4.0;
        for (band, d) in &self.offsets {
            if !d.is_finite() || d.dx.abs() > limit || d.dy.abs() > limit {
                return bad(format!("offset {d} of band {band} exceeds ±{limit}"));
            }
        }
        Ok(())
    }

    /// All bands in ascending order, reference included.
    pub fn bands(&self) -> Vec<BandId> {
        let mut bands: Vec<BandId> = self.offsets.keys().copied().collect();
        bands.push(self.reference);
        bands.sort();
        bands
    }

    pub fn offset(&self, band: BandId) -> Displacement {
        self.offsets.get(&band).copied().unwrap_or(Displacement::ZERO)
    }

    fn max_offset(&self) -> f64 {
        self.offsets
            .values()
            .map(|d| d.dx.abs().max(d.dy.abs()))
            .fold(0.0, f64::max)
    }
}

/// One band of one synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct BandImage {
    pub raster: Raster,
    /// Bounding boxes followed by polygons, one of each per object.
    pub labels: LabelSet,
}

fn stream(seed: u64, image: usize, band: Option<BandId>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((image as u64) << 32) | band.map_or(0xFFFF_FFFF, |b| u64::from(b.0)));
    rng
}

/// Smooth random field in `[0, 1]` on a lattice of `cell`-pixel squares.
fn value_noise(width: usize, height: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let gy = y / cell;
        let ty = smooth((y % cell) as f64 / cell as f64);
        for x in 0..width {
            let gx = x / cell;
            let tx = smooth((x % cell) as f64 / cell as f64);
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(gx, gy) * (1.0 - tx) + at(gx + 1, gy) * tx;
            let bottom = at(gx, gy + 1) * (1.0 - tx) + at(gx + 1, gy + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

fn ellipse_outline(cx: f64, cy: f64, a: f64, b: f64, angle: f64, n: usize) -> Vec<Point> {
    let (s, c) = angle.sin_cos();
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let (x, y) = (a * t.cos(), b * t.sin());
            Point::new(cx + x * c - y * s, cy + x * s + y * c)
        })
        .collect()
}

fn rounded_rect_outline(cx: f64, cy: f64, a: f64, b: f64, angle: f64) -> Vec<Point> {
    let r = 0.45 * a.min(b);
    let (s, c) = angle.sin_cos();
    let corners = [(a - r, b - r, 0.0), (-(a - r), b - r, 0.5 * PI), (-(a - r), -(b - r), PI), (a - r, -(b - r), 1.5 * PI)];
    let mut out = Vec::new();
    for (ox, oy, start) in corners {
        for k in 0..=5 {
            let t = start + 0.5 * PI * k as f64 / 5.0;
            let (x, y) = (ox + r * t.cos(), oy + r * t.sin());
            out.push(Point::new(cx + x * c - y * s, cy + x * s + y * c));
        }
    }
    out
}

/// Fraction of pixel `(x, y)`'s area inside `poly`, from 4x4 samples.
fn coverage(poly: &Polygon, x: usize, y: usize) -> f64 {
    const SUB: usize = 4;
    let v = poly.vertices();
    let mut inside = 0;
    for j in 0..SUB {
        let py = y as f64 + (j as f64 + 0.5) / SUB as f64;
        for i in 0..SUB {
            let px = x as f64 + (i as f64 + 0.5) / SUB as f64;
            let mut odd = false;
            let mut k = v.len() - 1;
            for m in 0..v.len() {
                let (a, b) = (v[m], v[k]);
                if (a.y > py) != (b.y > py) && px < a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y) {
                    odd = !odd;
                }
                k = m;
            }
            inside += usize::from(odd);
        }
    }
    inside as f64 / (SUB * SUB) as f64
}

/// Reference-band pixels (unclipped, unrounded) and labels for one image.
fn render_reference(spec: &SynthSpec, image: usize) -> Result<(Vec<f64>, LabelSet), SynthError> {
    let (w, h) = (spec.width, spec.height);
    let max = spec.bit_depth.max_value();
    let mut rng = stream(spec.seed, image, None);

    let coarse = value_noise(w, h, 48, &mut rng);
    let medium = value_noise(w, h, 9, &mut rng);
    let fine = value_noise(w, h, 3, &mut rng);
    let mut pixels: Vec<f64> = (0..w * h)
        .map(|i| max * (0.25 + 0.12 * coarse[i] + 0.08 * medium[i] + 0.05 * fine[i]))
        .collect();

    let margin = spec.max_offset() + spec.max_size + 2.0;
    if 2.0 * margin >= w as f64 || 2.0 * margin >= h as f64 {
        return Err(SynthError::InvalidSpec("image too small for the offsets and object sizes".into()));
    }
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let mut boxes = Vec::new();
    let mut polygons = Vec::new();
    let mut attempts = 0;
    while placed.len() < spec.objects {
        attempts += 1;
        if attempts > 10_000 * spec.objects.max(1) {
            return Err(SynthError::Crowded {
                wanted: spec.objects,
                placed: placed.len(),
            });
        }
        let size = rng.gen_range(spec.min_size..=spec.max_size);
        let cx = rng.gen_range(margin..w as f64 - margin);
        let cy = rng.gen_range(margin..h as f64 - margin);
        if placed
            .iter()
            .any(|&(px, py, ps)| (px - cx).hypot(py - cy) < (ps + size) / 2.0 + 6.0)
        {
            continue;
        }
        placed.push((cx, cy, size));

        let a = size / 2.0;
        let b = a * rng.gen_range(0.45..1.0);
        let angle = rng.gen_range(0.0..PI);
        let vertices = if rng.gen_bool(0.5) {
            ellipse_outline(cx, cy, a, b, angle, 32)
        } else {
            rounded_rect_outline(cx, cy, a, b, angle)
        };
        // Scale so the farthest vertex sits at half the drawn size.
        let reach = vertices.iter().map(|p| (p.x - cx).hypot(p.y - cy)).fold(0.0, f64::max);
        let k = a / reach;
        let vertices = vertices
            .into_iter()
            .map(|p| Point::new(cx + (p.x - cx) * k, cy + (p.y - cy) * k))
            .collect();
        let poly = Polygon::new(vertices).expect("outline has many vertices");
        let level = max * rng.gen_range(0.65..0.9);

        let (lo, hi) = poly.bounds();
        for y in lo.y.floor() as usize..=(hi.y.ceil() as usize).min(h - 1) {
            for x in lo.x.floor() as usize..=(hi.x.ceil() as usize).min(w - 1) {
                let f = coverage(&poly, x, y);
                if f > 0.0 {
                    let p = &mut pixels[y * w + x];
                    *p = *p * (1.0 - f) + level * f;
                }
            }
        }
        let name = format!("pill_{:02}", placed.len() - 1);
        boxes.push(Shape::bounding_box(name.clone(), lo, hi).expect("object has area"));
        polygons.push(Shape {
            name,
            geometry: crate::labels::Geometry::Polygon(poly),
        });
    }
    boxes.extend(polygons);
    Ok((pixels, LabelSet::new(w, h, boxes)))
}

/// Renders every band of image `image`.
pub fn render_image(spec: &SynthSpec, image: usize) -> Result<BTreeMap<BandId, BandImage>, SynthError> {
    spec.validate()?;
    let max = spec.bit_depth.max_value();
    let (pixels, labels) = render_reference(spec, image)?;
    let reference = Raster::new(spec.width, spec.height, spec.bit_depth, pixels)?;
    let sigma = spec.noise * max;

    let mut out = BTreeMap::new();
    for band in spec.bands() {
        let d = spec.offset(band);
        let shifted = shift_raster(&reference, d, spec.mode, 0.0)?;
        let mut rng = stream(spec.seed, image, Some(band));
        let gain = if band == spec.reference { 1.0 } else { rng.gen_range(0.75..1.05) };
        let noise = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
        let pixels = shifted
            .pixels()
            .iter()
            .map(|&p| {
                let n = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                (p * gain + n).round().clamp(0.0, max)
            })
            .collect();
        out.insert(
            band,
            BandImage {
                raster: Raster::new(spec.width, spec.height, spec.bit_depth, pixels)?,
                labels: translate_labels(&labels, d),
            },
        );
    }
    Ok(out)
}

/// File stem of synthetic image `i`.
pub fn image_stem(i: usize) -> String {
    format!("scene_{i:03}")
}

/// `<stem>__band<k>.<ext>`, the naming scheme for per-band files.
pub fn band_file_name(stem: &str, band: BandId, ext: &str) -> String {
    format!("{stem}__band{band}.{ext}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    pub stems: Vec<String>,
}

/// Writes images, per-band LabelMe ground truth, and `truth.json` into
/// `dir`. Identical specs produce byte-identical files.
pub fn write_dataset(spec: &SynthSpec, dir: &Path, format: RasterFormat) -> Result<SynthTruth, SynthError> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut stems = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let stem = image_stem(i);
        for (band, img) in render_image(spec, i)? {
            let image_name = band_file_name(&stem, band, format.extension());
            save_raster(&img.raster, dir.join(&image_name))?;
            write_labelme(&img.labels, &image_name, dir.join(band_file_name(&stem, band, "json")))?;
        }
        stems.push(stem);
    }
    let truth = SynthTruth {
        spec: spec.clone(),
        stems,
    };
    let path: PathBuf = dir.join("truth.json");
    let mut text = serde_json::to_string_pretty(&truth).expect("truth serializes");
    text.push('\n');
    atomic_write(&path, text.as_bytes()).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(truth)
}

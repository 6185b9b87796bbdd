//! Bounding-box and polygon labels, their translation between bands, and
//! IoU scoring with greedy one-to-one matching.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Displacement;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("bounding box corners must satisfy x1 < x2 and y1 < y2, got {0:?} and {1:?}")]
    DegenerateBox(Point, Point),
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("non-finite coordinate in shape")]
    NonFinite,
    #[error("cannot compare {0} labels with {1} labels")]
    MixedKinds(LabelKind, LabelKind),
    #[error("supersample factor must be at least 1")]
    InvalidSupersample,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn translated(self, d: Displacement) -> Self {
        Point::new(self.x + d.dx, self.y + d.dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelKind {
    #[serde(rename = "bb")]
    BoundingBox,
    #[serde(rename = "mask")]
    Polygon,
}

impl LabelKind {
    /// Short name used in file names, registry keys and CLI flags.
    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::BoundingBox => "bb",
            LabelKind::Polygon => "mask",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bb" => Some(LabelKind::BoundingBox),
            "mask" => Some(LabelKind::Polygon),
            _ => None,
        }
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned box from its top-left and bottom-right corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    min: Point,
    max: Point,
}

impl BoundingBox {
    pub fn new(min: Point, max: Point) -> Result<Self, LabelError> {
        if !min.is_finite() || !max.is_finite() {
            return Err(LabelError::NonFinite);
        }
        if !(min.x < max.x && min.y < max.y) {
            return Err(LabelError::DegenerateBox(min, max));
        }
        Ok(Self { min, max })
    }

    /// Orders two arbitrary opposite corners.
    pub fn from_corners(a: Point, b: Point) -> Result<Self, LabelError> {
        Self::new(
            Point::new(a.x.min(b.x), a.y.min(b.y)),
            Point::new(a.x.max(b.x), a.y.max(b.y)),
        )
    }

    pub fn min(&self) -> Point {
        self.min
    }

    pub fn max(&self) -> Point {
        self.max
    }

    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon {
            vertices: vec![
                self.min,
                Point::new(self.max.x, self.min.y),
                self.max,
                Point::new(self.min.x, self.max.y),
            ],
        }
    }

    fn translated(&self, d: Displacement) -> Self {
        Self {
            min: self.min.translated(d),
            max: self.max.translated(d),
        }
    }
}

/// Closed polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self, LabelError> {
        if vertices.len() < 3 {
            return Err(LabelError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(LabelError::NonFinite);
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Absolute shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum();
        twice.abs() / 2.0
    }

    pub fn bounds(&self) -> (Point, Point) {
        self.vertices.iter().fold(
            (
                Point::new(f64::INFINITY, f64::INFINITY),
                Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
            ),
            |(lo, hi), p| {
                (
                    Point::new(lo.x.min(p.x), lo.y.min(p.y)),
                    Point::new(hi.x.max(p.x), hi.y.max(p.y)),
                )
            },
        )
    }

    /// True when no two non-adjacent edges cross.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let edge = |i: usize| (self.vertices[i], self.vertices[(i + 1) % n]);
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = edge(i);
                let (c, d) = edge(j);
                if segments_cross(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    fn translated(&self, d: Displacement) -> Self {
        Self {
            vertices: self.vertices.iter().map(|p| p.translated(d)).collect(),
        }
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    BoundingBox(BoundingBox),
    Polygon(Polygon),
}

impl Geometry {
    pub fn kind(&self) -> LabelKind {
        match self {
            Geometry::BoundingBox(_) => LabelKind::BoundingBox,
            Geometry::Polygon(_) => LabelKind::Polygon,
        }
    }

    /// Label points in storage order (two corners for a box).
    pub fn points(&self) -> Vec<Point> {
        match self {
            Geometry::BoundingBox(b) => vec![b.min, b.max],
            Geometry::Polygon(p) => p.vertices.clone(),
        }
    }

    fn translated(&self, d: Displacement) -> Self {
        match self {
            Geometry::BoundingBox(b) => Geometry::BoundingBox(b.translated(d)),
            Geometry::Polygon(p) => Geometry::Polygon(p.translated(d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub name: String,
    pub geometry: Geometry,
}

impl Shape {
    pub fn bounding_box(name: impl Into<String>, min: Point, max: Point) -> Result<Self, LabelError> {
        Ok(Self {
            name: name.into(),
            geometry: Geometry::BoundingBox(BoundingBox::new(min, max)?),
        })
    }

    pub fn polygon(name: impl Into<String>, vertices: Vec<Point>) -> Result<Self, LabelError> {
        Ok(Self {
            name: name.into(),
            geometry: Geometry::Polygon(Polygon::new(vertices)?),
        })
    }

    pub fn kind(&self) -> LabelKind {
        self.geometry.kind()
    }
}

/// Shapes annotated on one image. Coordinates are never clipped to the
/// image frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub image_width: usize,
    pub image_height: usize,
    pub shapes: Vec<Shape>,
}

impl LabelSet {
    pub fn new(image_width: usize, image_height: usize, shapes: Vec<Shape>) -> Self {
        Self {
            image_width,
            image_height,
            shapes,
        }
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Copy holding only shapes of `kind`, order preserved.
    pub fn filter_kind(&self, kind: LabelKind) -> LabelSet {
        LabelSet {
            image_width: self.image_width,
            image_height: self.image_height,
            shapes: self
                .shapes
                .iter()
                .filter(|s| s.kind() == kind)
                .cloned()
                .collect(),
        }
    }

    /// The single kind shared by every shape, `None` when empty.
    pub fn uniform_kind(&self) -> Result<Option<LabelKind>, LabelError> {
        let mut kinds = self.shapes.iter().map(Shape::kind);
        let Some(first) = kinds.next() else {
            return Ok(None);
        };
        match kinds.find(|k| *k != first) {
            Some(other) => Err(LabelError::MixedKinds(first, other)),
            None => Ok(Some(first)),
        }
    }
}

/// Moves every point by `d`; names, kinds and order are preserved.
pub fn translate_labels(ls: &LabelSet, d: Displacement) -> LabelSet {
    LabelSet {
        image_width: ls.image_width,
        image_height: ls.image_height,
        shapes: ls
            .shapes
            .iter()
            .map(|s| Shape {
                name: s.name.clone(),
                geometry: s.geometry.translated(d),
            })
            .collect(),
    }
}

/// Closed-form intersection over union of two boxes.
pub fn iou_bb(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.max.x.min(b.max.x) - a.min.x.max(b.min.x);
    let h = a.max.y.min(b.max.y) - a.min.y.max(b.min.y);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Rasterized IoU of two polygons.
///
/// Both polygons are sampled at the points `((i + 0.5) / s, (j + 0.5) / s)`
/// for integer `i, j`, with `s = supersample`. A sample counts as inside by
/// the even-odd rule at its center.
pub fn iou_polygon(a: &Polygon, b: &Polygon, supersample: u32) -> Result<f64, LabelError> {
    if supersample == 0 {
        return Err(LabelError::InvalidSupersample);
    }
    if !bounds_overlap(a.bounds(), b.bounds()) {
        return Ok(0.0);
    }
    let s = f64::from(supersample);
    Ok(Coverage::new(a, Displacement::ZERO, s).iou(&Coverage::new(b, Displacement::ZERO, s)))
}

fn bounds_overlap((alo, ahi): (Point, Point), (blo, bhi): (Point, Point)) -> bool {
    ahi.x > blo.x && bhi.x > alo.x && ahi.y > blo.y && bhi.y > alo.y
}

/// Edge crossings of a polygon moved vertically by `dy`, one list per
/// sample row. Moving it horizontally by `dx` places every crossing at
/// `(x + dx) + offset`, so one instance serves a whole row of candidate
/// displacements.
#[derive(Debug, Clone)]
struct Crossings {
    s: f64,
    /// Global index of the first sample row.
    first_row: i64,
    /// Row `first_row + r` owns `xs[row_start[r]..row_start[r + 1]]`.
    row_start: Vec<usize>,
    /// `(x, offset)` pairs.
    xs: Vec<(f64, f64)>,
}

impl Crossings {
    fn new(poly: &Polygon, dy: f64, s: f64) -> Self {
        // Sample row r sits at height (r + 0.5) / s. An edge crosses the rows
        // whose height lies in [min y, max y) of the edge.
        let yc = |r: i64| (r as f64 + 0.5) / s;
        let first_row_from = |t: f64| {
            let mut r = (t * s - 0.5).ceil() as i64;
            while yc(r - 1) >= t {
                r -= 1;
            }
            while yc(r) < t {
                r += 1;
            }
            r
        };
        let (lo, hi) = poly.bounds();
        let first_row = first_row_from(lo.y + dy);
        let rows = (first_row_from(hi.y + dy) - first_row) as usize;

        let v = &poly.vertices;
        let n = v.len();
        let mut edges = Vec::with_capacity(n);
        let mut start = vec![0usize; rows + 1];
        for i in 0..n {
            let (p, q) = (v[i], v[(i + 1) % n]);
            let (py, qy) = (p.y + dy, q.y + dy);
            if py == qy {
                continue;
            }
            let r0 = (first_row_from(py.min(qy)) - first_row) as usize;
            let r1 = (first_row_from(py.max(qy)) - first_row) as usize;
            for c in &mut start[r0 + 1..=r1] {
                *c += 1;
            }
            edges.push((p.x, py, (q.x - p.x) / (qy - py), r0, r1));
        }
        for r in 0..rows {
            start[r + 1] += start[r];
        }
        let mut next = start.clone();
        let mut xs = vec![(0.0, 0.0); start[rows]];
        for &(x, y, slope, r0, r1) in &edges {
            for r in r0..r1 {
                xs[next[r]] = (x, (yc(first_row + r as i64) - y) * slope);
                next[r] += 1;
            }
        }
        Self {
            s,
            first_row,
            row_start: start,
            xs,
        }
    }

    fn rows(&self) -> usize {
        self.row_start.len() - 1
    }

    /// Sorted sample cuts of row `r` after moving by `dx`. Sample `i` has
    /// center `(i + 0.5) / s` and lies right of crossing `c` when
    /// `i >= ceil(c s - 0.5)`.
    fn cuts(&self, r: usize, dx: f64, out: &mut Vec<i64>) {
        out.clear();
        out.extend(self.xs[self.row_start[r]..self.row_start[r + 1]].iter().map(|&c| self.cut(c, dx)));
        insertion_sort(out);
    }

    fn cut(&self, (x, offset): (f64, f64), dx: f64) -> i64 {
        ceil_to_int(((x + dx) + offset) * self.s - 0.5)
    }

    fn coverage(&self, dx: f64) -> Coverage {
        let mut row_start = Vec::with_capacity(self.rows() + 1);
        let mut spans = Vec::with_capacity(self.xs.len() / 2);
        let mut cuts = Vec::new();
        let mut area = 0;
        row_start.push(0);
        for r in 0..self.rows() {
            self.cuts(r, dx, &mut cuts);
            area += push_spans(&cuts, &mut spans);
            row_start.push(spans.len());
        }
        Coverage {
            first_row: self.first_row,
            row_start,
            spans,
            area,
        }
    }

    /// Sample count after moving by `dx`, with the overlap against each of
    /// `targets` written to `inter`. Builds no coverage.
    fn measure(&self, dx: f64, targets: &[&Coverage], inter: &mut [u64], scratch: &mut Scratch) -> u64 {
        inter.fill(0);
        let mut area = 0;
        for r in 0..self.rows() {
            scratch.spans.clear();
            let xs = &self.xs[self.row_start[r]..self.row_start[r + 1]];
            if let [a, b] = xs {
                let (a, b) = (self.cut(*a, dx), self.cut(*b, dx));
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                if hi > lo {
                    scratch.spans.push((lo, hi));
                    area += (hi - lo) as u64;
                }
            } else {
                self.cuts(r, dx, &mut scratch.cuts);
                area += push_spans(&scratch.cuts, &mut scratch.spans);
            }
            if scratch.spans.is_empty() {
                continue;
            }
            let row = self.first_row + r as i64;
            for (t, total) in targets.iter().zip(inter.iter_mut()) {
                if row >= t.first_row && row < t.end_row() {
                    *total += overlap(&scratch.spans, t.row(row));
                }
            }
        }
        area
    }
}

/// `t.ceil() as i64` without a libm call.
fn ceil_to_int(t: f64) -> i64 {
    let i = t as i64;
    if (i as f64) < t {
        i + 1
    } else {
        i
    }
}

#[derive(Default)]
struct Scratch {
    cuts: Vec<i64>,
    spans: Vec<(i64, i64)>,
}

/// Appends the non-empty spans between consecutive cut pairs and returns
/// their total length.
fn push_spans(cuts: &[i64], spans: &mut Vec<(i64, i64)>) -> u64 {
    let mut area = 0;
    for pair in cuts.chunks_exact(2) {
        if pair[1] > pair[0] {
            spans.push((pair[0], pair[1]));
            area += (pair[1] - pair[0]) as u64;
        }
    }
    area
}

fn polygon_iou(inter: u64, a: u64, b: u64) -> f64 {
    let union = a + b - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Samples of one polygon as per-row runs of sample indices.
#[derive(Debug, Clone)]
struct Coverage {
    /// Global index of the first sample row.
    first_row: i64,
    /// Row `first_row + r` owns `spans[row_start[r]..row_start[r + 1]]`.
    row_start: Vec<usize>,
    /// Half-open `[lo, hi)` sample-column ranges, ascending within a row.
    spans: Vec<(i64, i64)>,
    area: u64,
}

impl Coverage {
    /// Coverage of `poly` moved by `d`.
    fn new(poly: &Polygon, d: Displacement, s: f64) -> Self {
        Crossings::new(poly, d.dy, s).coverage(d.dx)
    }

    fn end_row(&self) -> i64 {
        self.first_row + self.row_start.len() as i64 - 1
    }

    fn row(&self, r: i64) -> &[(i64, i64)] {
        let i = (r - self.first_row) as usize;
        &self.spans[self.row_start[i]..self.row_start[i + 1]]
    }

    fn intersection(&self, other: &Coverage) -> u64 {
        let lo = self.first_row.max(other.first_row);
        let hi = self.end_row().min(other.end_row());
        (lo..hi).map(|r| overlap(self.row(r), other.row(r))).sum()
    }

    fn iou(&self, other: &Coverage) -> f64 {
        polygon_iou(self.intersection(other), self.area, other.area)
    }
}

fn insertion_sort(v: &mut [i64]) {
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
}

fn overlap(a: &[(i64, i64)], b: &[(i64, i64)]) -> u64 {
    let (mut i, mut j, mut total) = (0, 0, 0u64);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += (hi - lo) as u64;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// IoU of two shapes of the same kind.
pub fn iou(a: &Shape, b: &Shape, supersample: u32) -> Result<f64, LabelError> {
    match (&a.geometry, &b.geometry) {
        (Geometry::BoundingBox(x), Geometry::BoundingBox(y)) => Ok(iou_bb(x, y)),
        (Geometry::Polygon(x), Geometry::Polygon(y)) => iou_polygon(x, y, supersample),
        _ => Err(LabelError::MixedKinds(a.kind(), b.kind())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub predicted: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchedPair>,
    pub mean_iou: f64,
    pub unmatched_predicted: usize,
    pub unmatched_ground_truth: usize,
}

impl MatchReport {
    /// `max(#predicted, #ground_truth)`, the denominator of `mean_iou`.
    pub fn denominator(&self) -> usize {
        (self.pairs.len() + self.unmatched_predicted).max(self.pairs.len() + self.unmatched_ground_truth)
    }

    pub fn iou_sum(&self) -> f64 {
        self.pairs.iter().map(|p| p.iou).sum()
    }
}

/// Greedy one-to-one assignment by descending score.
///
/// `scores[p][g]` is the IoU of prediction `p` with ground truth `g`. Zero
/// scores are never matched. Ties go to the lower prediction index, then
/// the lower ground-truth index.
pub fn greedy_assignment(scores: &[Vec<f64>]) -> Vec<MatchedPair> {
    let mut candidates: Vec<MatchedPair> = scores
        .iter()
        .enumerate()
        .flat_map(|(p, row)| {
            row.iter().enumerate().filter(|(_, &s)| s > 0.0).map(move |(g, &s)| MatchedPair {
                predicted: p,
                ground_truth: g,
                iou: s,
            })
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.predicted.cmp(&b.predicted))
            .then(a.ground_truth.cmp(&b.ground_truth))
    });
    let n_gt = scores.first().map_or(0, Vec::len);
    let mut used_p = vec![false; scores.len()];
    let mut used_g = vec![false; n_gt];
    let mut pairs = Vec::new();
    for c in candidates {
        if !used_p[c.predicted] && !used_g[c.ground_truth] {
            used_p[c.predicted] = true;
            used_g[c.ground_truth] = true;
            pairs.push(c);
        }
    }
    pairs
}

/// Ground truth with polygon rasterizations computed once, for scoring
/// many predictions against the same labels.
#[derive(Debug, Clone)]
pub struct PreparedLabels {
    len: usize,
    kind: Option<LabelKind>,
    supersample: u32,
    shapes: Vec<PreparedShape>,
}

#[derive(Debug, Clone)]
enum PreparedShape {
    Box(BoundingBox),
    Polygon((Point, Point), Coverage),
}

impl PreparedShape {
    fn new(shape: &Shape, s: f64) -> Self {
        match &shape.geometry {
            Geometry::BoundingBox(b) => PreparedShape::Box(*b),
            Geometry::Polygon(p) => PreparedShape::Polygon(p.bounds(), Coverage::new(p, Displacement::ZERO, s)),
        }
    }
}

impl PreparedLabels {
    pub fn new(gt: &LabelSet, supersample: u32) -> Result<Self, LabelError> {
        let kind = gt.uniform_kind()?;
        if supersample == 0 && kind == Some(LabelKind::Polygon) {
            return Err(LabelError::InvalidSupersample);
        }
        let s = f64::from(supersample);
        Ok(Self {
            len: gt.len(),
            kind,
            supersample,
            shapes: gt.shapes.iter().map(|g| PreparedShape::new(g, s)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Matches predictions to ground truth and averages IoU over
/// `max(#pred, #gt)`, so unmatched shapes on either side count as zero.
/// Two empty sets agree perfectly.
pub fn match_and_score(pred: &LabelSet, gt: &LabelSet, supersample: u32) -> Result<MatchReport, LabelError> {
    match_prepared(pred, &PreparedLabels::new(gt, supersample)?)
}

/// [`match_and_score`] against prepared ground truth.
pub fn match_prepared(pred: &LabelSet, gt: &PreparedLabels) -> Result<MatchReport, LabelError> {
    match_translated(pred, Displacement::ZERO, gt)
}

/// Scores `pred` moved by `d`. The result equals translating it with
/// [`translate_labels`] first whenever that translation is exact.
pub fn match_translated(pred: &LabelSet, d: Displacement, gt: &PreparedLabels) -> Result<MatchReport, LabelError> {
    ShiftedLabels::new(pred, d.dy, gt)?.match_at(d.dx, gt)
}

/// Predictions moved vertically by a fixed amount, ready to be scored at
/// many horizontal offsets against one prepared ground truth.
#[derive(Debug, Clone)]
pub struct ShiftedLabels<'a> {
    pred: &'a LabelSet,
    dy: f64,
    supersample: u32,
    crossings: Vec<Option<Crossings>>,
}

impl<'a> ShiftedLabels<'a> {
    pub fn new(pred: &'a LabelSet, dy: f64, gt: &PreparedLabels) -> Result<Self, LabelError> {
        let pred_kind = pred.uniform_kind()?;
        if let (Some(a), Some(b)) = (pred_kind, gt.kind) {
            if a != b {
                return Err(LabelError::MixedKinds(a, b));
            }
        }
        if gt.supersample == 0 && pred_kind == Some(LabelKind::Polygon) {
            return Err(LabelError::InvalidSupersample);
        }
        let s = f64::from(gt.supersample);
        let crossings = pred
            .shapes
            .iter()
            .map(|p| match &p.geometry {
                Geometry::Polygon(a) => Some(Crossings::new(a, dy, s)),
                Geometry::BoundingBox(_) => None,
            })
            .collect();
        Ok(Self {
            pred,
            dy,
            supersample: gt.supersample,
            crossings,
        })
    }

    /// Matches the predictions moved by `(dx, dy)` against `gt`, which must
    /// be the ground truth this instance was built for.
    pub fn match_at(&self, dx: f64, gt: &PreparedLabels) -> Result<MatchReport, LabelError> {
        if gt.supersample != self.supersample {
            return Err(LabelError::InvalidSupersample);
        }
        let d = Displacement::new(dx, self.dy);
        let mut scratch = Scratch::default();
        let mut targets = Vec::new();
        let mut inter = Vec::new();
        let mut scores = Vec::with_capacity(self.pred.len());
        for (p, crossings) in self.pred.shapes.iter().zip(&self.crossings) {
            let row = match (&p.geometry, crossings) {
                (Geometry::BoundingBox(a), _) => {
                    let a = a.translated(d);
                    gt.shapes
                        .iter()
                        .map(|g| match g {
                            PreparedShape::Box(b) => iou_bb(&a, b),
                            PreparedShape::Polygon(..) => unreachable!("kinds checked on construction"),
                        })
                        .collect()
                }
                (Geometry::Polygon(a), Some(crossings)) => {
                    let (lo, hi) = a.bounds();
                    let bounds = (lo.translated(d), hi.translated(d));
                    targets.clear();
                    let mut row = vec![0.0; gt.shapes.len()];
                    let mut hits = Vec::new();
                    for (j, g) in gt.shapes.iter().enumerate() {
                        match g {
                            PreparedShape::Polygon(gb, gc) if bounds_overlap(bounds, *gb) => {
                                targets.push(gc);
                                hits.push(j);
                            }
                            PreparedShape::Polygon(..) => {}
                            PreparedShape::Box(_) => unreachable!("kinds checked on construction"),
                        }
                    }
                    if !targets.is_empty() {
                        inter.resize(targets.len(), 0);
                        let area = crossings.measure(dx, &targets, &mut inter, &mut scratch);
                        for ((&j, t), &i) in hits.iter().zip(&targets).zip(&inter) {
                            row[j] = polygon_iou(i, area, t.area);
                        }
                    }
                    row
                }
                (Geometry::Polygon(_), None) => unreachable!("built for every polygon"),
            };
            scores.push(row);
        }
        let pairs = greedy_assignment(&scores);
        let denom = self.pred.len().max(gt.len);
        let mean_iou = if denom == 0 {
            1.0
        } else {
            pairs.iter().map(|p| p.iou).sum::<f64>() / denom as f64
        };
        Ok(MatchReport {
            unmatched_predicted: self.pred.len() - pairs.len(),
            unmatched_ground_truth: gt.len - pairs.len(),
            pairs,
            mean_iou,
        })
    }
}

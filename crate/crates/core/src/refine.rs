//! Cascaded grid search that polishes a phase-correlation displacement by
//! maximizing label IoU against annotated calibration images.
//!
//! Each scale evaluates a `(2n+1) x (2n+1)` grid centered on the current
//! best displacement. The first center is the initial estimate rounded to
//! the first scale; later centers keep their fractional part.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{match_translated, LabelError, LabelKind, LabelSet, PreparedLabels, ShiftedLabels};
use crate::raster::Displacement;

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("refinement needs at least one calibration pair")]
    NoPairs,
    #[error("calibration pair {0} has no ground-truth shapes")]
    EmptyGroundTruth(usize),
    #[error("calibration pair {0} has no source shapes")]
    EmptySource(usize),
    #[error("calibration pair {pair} holds {found} labels but refinement is configured for {expected}")]
    KindMismatch {
        pair: usize,
        expected: LabelKind,
        found: LabelKind,
    },
    #[error("initial displacement {0} is not finite")]
    NonFinite(Displacement),
    #[error("invalid refine config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Steps on each side of the center, per axis.
    pub steps: u32,
    /// Strictly decreasing grid spacings in pixels.
    pub scales: Vec<f64>,
    pub kind: LabelKind,
    /// Samples per pixel per axis for polygon IoU.
    pub supersample: u32,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 5,
            scales: vec![1.0, 0.1, 0.01],
            kind: LabelKind::BoundingBox,
            supersample: 8,
        }
    }
}

impl RefineConfig {
    pub fn with_kind(kind: LabelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        if self.steps == 0 {
            return Err(RefineError::InvalidConfig("steps must be at least 1".into()));
        }
        if self.scales.is_empty() {
            return Err(RefineError::InvalidConfig("at least one scale is required".into()));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(RefineError::InvalidConfig("scales must be positive".into()));
        }
        if self.scales.windows(2).any(|w| w[1] >= w[0]) {
            return Err(RefineError::InvalidConfig("scales must be strictly decreasing".into()));
        }
        if self.supersample == 0 {
            return Err(RefineError::InvalidConfig("supersample must be at least 1".into()));
        }
        Ok(())
    }

    /// Candidates evaluated per scale, `(2n+1)^2`.
    pub fn grid_size(&self) -> usize {
        let side = 2 * self.steps as usize + 1;
        side * side
    }

    /// Scoring calls made by one refinement, `1 + |scales| (2n+1)^2`.
    pub fn evaluation_budget(&self) -> usize {
        1 + self.scales.len() * self.grid_size()
    }
}

/// Labels on the reference band and ground truth on a target band for one
/// calibration image.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPair {
    pub source: LabelSet,
    pub target: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Grid spacing of this stage; `None` for the initial estimate.
    pub scale: Option<f64>,
    pub displacement: Displacement,
    pub mean_iou: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedTransform {
    pub displacement: Displacement,
    pub mean_iou: f64,
    pub trace: Vec<StageRecord>,
    /// Number of full-pair scoring calls performed.
    pub evaluations: usize,
}

/// Row-major grid (`k_y` outer, `k_x` inner) of `center + k * s` for
/// `k` in `[-n, n]` on each axis.
pub fn candidate_grid(center: Displacement, n: u32, s: f64) -> Vec<Displacement> {
    let n = n as i64;
    let mut out = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
    for ky in -n..=n {
        for kx in -n..=n {
            out.push(Displacement::new(
                center.dx + kx as f64 * s,
                center.dy + ky as f64 * s,
            ));
        }
    }
    out
}

/// Mean over calibration pairs of the matched IoU between the translated
/// source labels and the target ground truth.
pub fn score_displacement(
    d: Displacement,
    pairs: &[CalibrationPair],
    supersample: u32,
) -> Result<f64, RefineError> {
    let prepared = prepare(pairs, supersample)?;
    score_prepared(d, pairs, &prepared)
}

fn prepare(pairs: &[CalibrationPair], supersample: u32) -> Result<Vec<PreparedLabels>, RefineError> {
    Ok(pairs
        .iter()
        .map(|p| PreparedLabels::new(&p.target, supersample))
        .collect::<Result<_, _>>()?)
}

fn score_prepared(d: Displacement, pairs: &[CalibrationPair], targets: &[PreparedLabels]) -> Result<f64, RefineError> {
    let mut total = 0.0;
    for (pair, target) in pairs.iter().zip(targets) {
        total += match_translated(&pair.source, d, target)?.mean_iou;
    }
    Ok(total / pairs.len() as f64)
}

/// Scores one grid row, whose candidates share a vertical offset, so the
/// sources are rasterized once per row rather than once per candidate.
/// Agrees exactly with [`score_prepared`] on each candidate.
fn score_row(row: &[Displacement], pairs: &[CalibrationPair], targets: &[PreparedLabels]) -> Result<Vec<f64>, RefineError> {
    let mut totals = vec![0.0; row.len()];
    for (pair, target) in pairs.iter().zip(targets) {
        let shifted = ShiftedLabels::new(&pair.source, row[0].dy, target)?;
        for (total, d) in totals.iter_mut().zip(row) {
            debug_assert_eq!(d.dy, row[0].dy);
            *total += shifted.match_at(d.dx, target)?.mean_iou;
        }
    }
    Ok(totals.into_iter().map(|t| t / pairs.len() as f64).collect())
}

fn validate_pairs(pairs: &[CalibrationPair], kind: LabelKind) -> Result<(), RefineError> {
    if pairs.is_empty() {
        return Err(RefineError::NoPairs);
    }
    for (i, pair) in pairs.iter().enumerate() {
        if pair.target.is_empty() {
            return Err(RefineError::EmptyGroundTruth(i));
        }
        if pair.source.is_empty() {
            return Err(RefineError::EmptySource(i));
        }
        for shape in pair.source.shapes.iter().chain(&pair.target.shapes) {
            if shape.kind() != kind {
                return Err(RefineError::KindMismatch {
                    pair: i,
                    expected: kind,
                    found: shape.kind(),
                });
            }
        }
    }
    Ok(())
}

fn round_to(value: f64, scale: f64) -> f64 {
    (value / scale).round() * scale
}

/// Runs the cascade from `initial` and returns the best displacement with
/// a per-stage trace.
///
/// Within a stage the highest score wins; ties go to the candidate nearest
/// the stage center, then to grid order. A stage whose best candidate
/// scores below the incumbent keeps the incumbent, so trace IoU never
/// decreases.
pub fn refine_displacement(
    initial: Displacement,
    pairs: &[CalibrationPair],
    cfg: &RefineConfig,
) -> Result<RefinedTransform, RefineError> {
    cfg.validate()?;
    if !initial.is_finite() {
        return Err(RefineError::NonFinite(initial));
    }
    validate_pairs(pairs, cfg.kind)?;

    let started = Instant::now();
    let targets = prepare(pairs, cfg.supersample)?;
    let mut best = initial;
    let mut best_iou = score_prepared(initial, pairs, &targets)?;
    let mut evaluations = 1;
    let mut trace = vec![StageRecord {
        stage: 0,
        scale: None,
        displacement: best,
        mean_iou: best_iou,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    }];

    for (i, &scale) in cfg.scales.iter().enumerate() {
        let started = Instant::now();
        let center = if i == 0 {
            Displacement::new(round_to(best.dx, scale), round_to(best.dy, scale))
        } else {
            best
        };
        let grid = candidate_grid(center, cfg.steps, scale);
        let side = 2 * cfg.steps as usize + 1;
        let scores = grid
            .par_chunks(side)
            .map(|row| score_row(row, pairs, &targets))
            .collect::<Result<Vec<_>, _>>()?
            .concat();
        evaluations += grid.len();

        let mut winner = 0;
        for k in 1..grid.len() {
            let better = match scores[k].total_cmp(&scores[winner]) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => (grid[k] - center).norm() < (grid[winner] - center).norm(),
            };
            if better {
                winner = k;
            }
        }
        if scores[winner] >= best_iou {
            best = grid[winner];
            best_iou = scores[winner];
        }
        trace.push(StageRecord {
            stage: i + 1,
            scale: Some(scale),
            displacement: best,
            mean_iou: best_iou,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }

    Ok(RefinedTransform {
        displacement: best,
        mean_iou: best_iou,
        trace,
        evaluations,
    })
}

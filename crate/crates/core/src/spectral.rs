//! Phase correlation: windowing, 2D DFT, normalized cross-power spectrum,
//! inverse transform and weighted-centroid peak localization.
//!
//! Transforms operate on arbitrary `M x N` sizes (no power-of-two padding).
//! The forward DFT is unnormalized; the inverse carries the `1/(M*N)` factor.
//! Spectra are stored row-major with `u` (column frequency) varying fastest.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::rc::Rc;
use std::sync::{Arc, Mutex};

pub use rustfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::raster::{Displacement, Raster, RasterError};

/// Guard added to the cross-power modulus so empty bins map to zero.
pub const CROSS_POWER_EPS: f64 = 1e-12;

/// Half-width of the centroid neighborhood (5x5).
const CENTROID_RADIUS: i64 = 2;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("window dimensions must be at least 2x2, got {width}x{height}")]
    WindowTooSmall { width: usize, height: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("correlation surface maximum is {0}; inputs carry no usable signal")]
    DegenerateSurface(f64),
    #[error("expected {expected} values, got {actual}")]
    ValueCount { expected: usize, actual: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

fn check_dims(left: (usize, usize), right: (usize, usize)) -> Result<(), SpectralError> {
    if left != right {
        return Err(SpectralError::DimensionMismatch { left, right });
    }
    Ok(())
}

/// Separable Hann window weights for an `M x N` image.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl WindowMatrix {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.weights[y * self.width + x]
    }
}

fn hann_1d(len: usize) -> Vec<f64> {
    let denom = (len - 1) as f64;
    (0..len)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos()))
        .collect()
}

/// `w(x, y) = 0.5(1 - cos(2πx/(M-1))) * 0.5(1 - cos(2πy/(N-1)))`.
pub fn hanning_window(width: usize, height: usize) -> Result<WindowMatrix, SpectralError> {
    if width < 2 || height < 2 {
        return Err(SpectralError::WindowTooSmall { width, height });
    }
    let wx = hann_1d(width);
    let wy = hann_1d(height);
    let mut weights = Vec::with_capacity(width * height);
    for &vy in &wy {
        weights.extend(wx.iter().map(|&vx| vx * vy));
    }
    Ok(WindowMatrix {
        width,
        height,
        weights,
    })
}

pub fn apply_window(r: &Raster, w: &WindowMatrix) -> Result<Raster, SpectralError> {
    check_dims(r.dimensions(), (w.width, w.height))?;
    let pixels = r
        .pixels()
        .iter()
        .zip(&w.weights)
        .map(|(p, k)| p * k)
        .collect();
    Ok(Raster::new(r.width(), r.height(), r.bit_depth(), pixels)?)
}

/// Complex frequency-domain grid indexed by `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    width: usize,
    height: usize,
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(width: usize, height: usize, values: Vec<Complex64>) -> Result<Self, SpectralError> {
        if values.len() != width * height {
            return Err(SpectralError::ValueCount {
                expected: width * height,
                actual: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                values.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.values[v * self.width + u]
    }
}

/// Real correlation grid scaled so its maximum is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl CorrelationSurface {
    /// Wraps raw values without rescaling them.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, SpectralError> {
        if values.len() != width * height || width == 0 || height == 0 {
            return Err(SpectralError::ValueCount {
                expected: width * height,
                actual: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Planned row and column transforms for one image size.
struct Dft2d {
    width: usize,
    height: usize,
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
}

impl Dft2d {
    fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            rows: planner.plan_fft_forward(width),
            cols: planner.plan_fft_forward(height),
            rows_inv: planner.plan_fft_inverse(width),
            cols_inv: planner.plan_fft_inverse(height),
        }
    }

    fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.rows, &self.cols);
    }

    /// Unnormalized inverse.
    fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.rows_inv, &self.cols_inv);
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let mut scratch = vec![Complex64::default(); rows.get_inplace_scratch_len()];
        rows.process_with_scratch(data, &mut scratch);
        transform_columns(data, self.width, self.height, cols);
    }
}

/// Applies `fft` to every column of a row-major `width x height` buffer.
/// Columns are gathered a few at a time into a contiguous buffer.
fn transform_columns(data: &mut [Complex64], width: usize, height: usize, fft: &Arc<dyn Fft<f64>>) {
    let (w, h) = (width, height);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut batch = vec![Complex64::default(); COLUMN_BATCH * h];
    for x0 in (0..w).step_by(COLUMN_BATCH) {
        let n = COLUMN_BATCH.min(w - x0);
        let buf = &mut batch[..n * h];
        for y in 0..h {
            let row = &data[y * w + x0..y * w + x0 + n];
            for (j, &c) in row.iter().enumerate() {
                buf[j * h + y] = c;
            }
        }
        fft.process_with_scratch(buf, &mut scratch);
        for y in 0..h {
            let row = &mut data[y * w + x0..y * w + x0 + n];
            for (j, c) in row.iter_mut().enumerate() {
                *c = buf[j * h + y];
            }
        }
    }
}

const COLUMN_BATCH: usize = 16;

/// Unnormalized forward DFT of a raster.
pub fn forward_dft(r: &Raster) -> Spectrum {
    forward_with(&Dft2d::new(r.width(), r.height()), r)
}

fn forward_with(plan: &Dft2d, r: &Raster) -> Spectrum {
    let mut values: Vec<Complex64> = r.pixels().iter().map(|&p| Complex64::new(p, 0.0)).collect();
    plan.forward(&mut values);
    Spectrum {
        width: r.width(),
        height: r.height(),
        values,
    }
}

#[inline]
fn modulus(c: Complex64) -> f64 {
    (c.re * c.re + c.im * c.im).sqrt()
}

/// `CP = (A * conj(B)) / (|A * conj(B)| + eps)`; every output has modulus
/// below 1.
pub fn cross_power_spectrum(a: &Spectrum, b: &Spectrum, eps: f64) -> Result<Spectrum, SpectralError> {
    check_dims(a.dimensions(), b.dimensions())?;
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| {
            let p = x * y.conj();
            p / (modulus(p) + eps)
        })
        .collect();
    Ok(Spectrum {
        width: a.width,
        height: a.height,
        values,
    })
}

/// Inverse DFT scaled by `1/(M*N)`, real part kept, then divided by its
/// maximum.
pub fn inverse_dft(s: &Spectrum) -> Result<CorrelationSurface, SpectralError> {
    inverse_with(&Dft2d::new(s.width, s.height), s)
}

fn inverse_with(plan: &Dft2d, s: &Spectrum) -> Result<CorrelationSurface, SpectralError> {
    surface_from_spectrum(plan, s.values.clone())
}

fn surface_from_spectrum(plan: &Dft2d, mut data: Vec<Complex64>) -> Result<CorrelationSurface, SpectralError> {
    plan.inverse(&mut data);
    let values = data.iter().map(|c| c.re).collect();
    drop(data);
    normalized_surface(plan.width, plan.height, values)
}

/// Scales an unnormalized inverse by `1/(M*N)`, then divides by the maximum.
fn normalized_surface(width: usize, height: usize, mut values: Vec<f64>) -> Result<CorrelationSurface, SpectralError> {
    let scale = 1.0 / (width * height) as f64;
    let mut max = f64::NEG_INFINITY;
    for v in &mut values {
        *v *= scale;
        max = max.max(*v);
    }
    if max <= 0.0 || !max.is_finite() {
        return Err(SpectralError::DegenerateSurface(max));
    }
    for v in &mut values {
        *v /= max;
    }
    Ok(CorrelationSurface { width, height, values })
}

/// Unscaled inverse transform, real and imaginary parts kept. Used to check
/// the forward/inverse round trip.
pub fn inverse_dft_raw(s: &Spectrum) -> Vec<Complex64> {
    let mut data = s.values.clone();
    Dft2d::new(s.width, s.height).inverse(&mut data);
    let scale = 1.0 / (s.width * s.height) as f64;
    data.iter_mut().for_each(|c| *c *= scale);
    data
}

/// Argmax of the surface refined by a 5x5 intensity-weighted centroid.
///
/// The neighborhood wraps around the borders and negative values get zero
/// weight. Ties for the maximum go to the lowest row, then lowest column.
/// Positions past the half-range are reported as negative displacements.
pub fn locate_peak(c: &CorrelationSurface) -> Displacement {
    let (w, h) = (c.width, c.height);
    let mut best = 0;
    for (i, &v) in c.values.iter().enumerate() {
        if v > c.values[best] {
            best = i;
        }
    }
    let (px, py) = ((best % w) as i64, (best / w) as i64);

    let mut sum = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for oy in -CENTROID_RADIUS..=CENTROID_RADIUS {
        let y = (py + oy).rem_euclid(h as i64) as usize;
        for ox in -CENTROID_RADIUS..=CENTROID_RADIUS {
            let x = (px + ox).rem_euclid(w as i64) as usize;
            let weight = c.values[y * w + x].max(0.0);
            sum += weight;
            sx += weight * ox as f64;
            sy += weight * oy as f64;
        }
    }
    let (cx, cy) = if sum > 0.0 {
        (px as f64 + sx / sum, py as f64 + sy / sum)
    } else {
        (px as f64, py as f64)
    };
    Displacement::new(unwrap_axis(cx, w), unwrap_axis(cy, h))
}

fn unwrap_axis(p: f64, len: usize) -> f64 {
    if p > len as f64 / 2.0 {
        p - len as f64
    } else {
        p
    }
}

/// Estimates `d` such that a point `p` on `i1` appears at `p + d` on `i2`.
///
/// Each thread keeps the correlator of its most recent image size, so a
/// run of same-sized pairs plans and allocates once.
pub fn phase_correlate(i1: &Raster, i2: &Raster) -> Result<Displacement, SpectralError> {
    thread_local! {
        static LAST: RefCell<Option<Rc<PhaseCorrelator>>> = const { RefCell::new(None) };
    }
    check_dims(i1.dimensions(), i2.dimensions())?;
    let correlator = LAST.with(|last| -> Result<_, SpectralError> {
        let mut last = last.borrow_mut();
        match &*last {
            Some(c) if c.dimensions() == i1.dimensions() => Ok(Rc::clone(c)),
            _ => {
                let c = Rc::new(PhaseCorrelator::new(i1.width(), i1.height())?);
                *last = Some(Rc::clone(&c));
                Ok(c)
            }
        }
    })?;
    correlator.correlate(i1, i2)
}

/// Reusable phase correlation for a fixed image size. Holds the window,
/// FFT plans and working buffers; results match [`phase_correlate`] to
/// rounding. Concurrent calls on one instance are serialized.
pub struct PhaseCorrelator {
    window: WindowMatrix,
    plan: HalfDft,
    buffers: Mutex<Buffers>,
}

#[derive(Default)]
struct Buffers {
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    values: Vec<f64>,
}

impl PhaseCorrelator {
    pub fn new(width: usize, height: usize) -> Result<Self, SpectralError> {
        Ok(Self {
            window: hanning_window(width, height)?,
            plan: HalfDft::new(width, height),
            buffers: Mutex::new(Buffers::default()),
        })
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.plan.width, self.plan.height)
    }

    pub fn correlate(&self, i1: &Raster, i2: &Raster) -> Result<Displacement, SpectralError> {
        check_dims(i1.dimensions(), self.dimensions())?;
        let mut guard = self.buffers.lock().unwrap_or_else(|e| e.into_inner());
        let buf = &mut *guard;
        let mut a = std::mem::take(&mut buf.a);
        self.plan.forward(i1.pixels(), self.window.weights(), &mut a);
        let peak = self.peak(&a, i2, buf);
        buf.a = a;
        peak
    }

    /// Windowed spectrum of `i1` for repeated use as the first image of
    /// [`PhaseCorrelator::correlate_with`].
    pub fn reference(&self, i1: &Raster) -> Result<ReferenceSpectrum, SpectralError> {
        check_dims(i1.dimensions(), self.dimensions())?;
        let mut values = Vec::new();
        self.plan.forward(i1.pixels(), self.window.weights(), &mut values);
        Ok(ReferenceSpectrum {
            width: self.plan.width,
            height: self.plan.height,
            values,
        })
    }

    /// Same result as `correlate(i1, i2)` where `reference` came from `i1`.
    pub fn correlate_with(&self, reference: &ReferenceSpectrum, i2: &Raster) -> Result<Displacement, SpectralError> {
        check_dims((reference.width, reference.height), self.dimensions())?;
        let mut guard = self.buffers.lock().unwrap_or_else(|e| e.into_inner());
        self.peak(&reference.values, i2, &mut guard)
    }

    /// Normalized correlation surface whose peak sits at the displacement.
    pub fn surface(&self, i1: &Raster, i2: &Raster) -> Result<CorrelationSurface, SpectralError> {
        let reference = self.reference(i1)?;
        let mut guard = self.buffers.lock().unwrap_or_else(|e| e.into_inner());
        self.run(&reference.values, i2, &mut guard.b, Vec::new())
    }

    fn peak(&self, a: &[Complex64], i2: &Raster, buf: &mut Buffers) -> Result<Displacement, SpectralError> {
        let values = std::mem::take(&mut buf.values);
        let surface = self.run(a, i2, &mut buf.b, values)?;
        let peak = locate_peak(&surface);
        buf.values = surface.values;
        Ok(peak)
    }

    fn run(
        &self,
        a: &[Complex64],
        i2: &Raster,
        b: &mut Vec<Complex64>,
        mut values: Vec<f64>,
    ) -> Result<CorrelationSurface, SpectralError> {
        check_dims(i2.dimensions(), self.dimensions())?;
        let (w, h) = self.dimensions();
        self.plan.forward(i2.pixels(), self.window.weights(), b);
        for (y, x) in b.iter_mut().zip(a) {
            // conj(I1) on the right puts the peak at +d rather than -d.
            let p = *y * x.conj();
            *y = p / (modulus(p) + CROSS_POWER_EPS);
        }
        self.plan.inverse(b, &mut values);
        normalized_surface(w, h, values)
    }
}

/// Windowed half spectrum of a first image, built by
/// [`PhaseCorrelator::reference`].
pub struct ReferenceSpectrum {
    width: usize,
    height: usize,
    values: Vec<Complex64>,
}

impl ReferenceSpectrum {
    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// 2D transforms of real images kept as the half spectrum `u <= M/2`,
/// stored row-major with rows of `M/2 + 1` bins.
struct HalfDft {
    width: usize,
    height: usize,
    half: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    cols: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
}

impl HalfDft {
    fn new(width: usize, height: usize) -> Self {
        let mut real = RealFftPlanner::new();
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            half: width / 2 + 1,
            r2c: real.plan_fft_forward(width),
            c2r: real.plan_fft_inverse(width),
            cols: planner.plan_fft_forward(height),
            cols_inv: planner.plan_fft_inverse(height),
        }
    }

    /// Unnormalized spectrum of `pixels * window`, written to `out`.
    fn forward(&self, pixels: &[f64], window: &[f64], out: &mut Vec<Complex64>) {
        let (w, h, wc) = (self.width, self.height, self.half);
        out.resize(wc * h, Complex64::default());
        let mut row = self.r2c.make_input_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for (y, spectrum) in out.chunks_exact_mut(wc).enumerate() {
            let span = y * w..(y + 1) * w;
            for ((r, p), k) in row.iter_mut().zip(&pixels[span.clone()]).zip(&window[span]) {
                *r = p * k;
            }
            self.r2c
                .process_with_scratch(&mut row, spectrum, &mut scratch)
                .expect("buffers are sized by the plan");
        }
        transform_columns(out, wc, h, &self.cols);
    }

    /// Unnormalized real inverse of a Hermitian half spectrum. `spectrum`
    /// is used as working space.
    fn inverse(&self, spectrum: &mut [Complex64], values: &mut Vec<f64>) {
        let (w, h, wc) = (self.width, self.height, self.half);
        transform_columns(spectrum, wc, h, &self.cols_inv);
        values.resize(w * h, 0.0);
        let mut scratch = self.c2r.make_scratch_vec();
        for (row, out) in spectrum.chunks_exact_mut(wc).zip(values.chunks_exact_mut(w)) {
            // These bins are real for a Hermitian input; drop rounding residue.
            row[0].im = 0.0;
            if w % 2 == 0 {
                row[wc - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(row, out, &mut scratch)
                .expect("buffers are sized by the plan");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BitDepth;

    // O((MN)^2) direct summation of the DFT definition.
    fn naive_dft(r: &Raster, sign: f64) -> Vec<Complex64> {
        let (m, n) = r.dimensions();
        let mut out = Vec::with_capacity(m * n);
        for v in 0..n {
            for u in 0..m {
                let mut acc = Complex64::default();
                for y in 0..n {
                    for x in 0..m {
                        let phase = sign * 2.0 * PI * ((u * x) as f64 / m as f64 + (v * y) as f64 / n as f64);
                        acc += Complex64::from_polar(r.get(x, y), phase);
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    fn raster(m: usize, n: usize, f: impl FnMut(usize, usize) -> f64) -> Raster {
        Raster::from_fn(m, n, BitDepth::Sixteen, f).unwrap()
    }

    #[test]
    fn window_examples() {
        let w3 = hanning_window(3, 3).unwrap();
        assert_eq!(w3.get(1, 1), 1.0);
        for (x, y) in [(0, 0), (1, 0), (2, 0), (0, 1), (2, 1), (0, 2), (1, 2), (2, 2)] {
            assert!(w3.get(x, y).abs() < 1e-15);
        }

        // 0.5 * (1 - cos(2π/3)) = 0.75 per axis
        let w4 = hanning_window(4, 4).unwrap();
        assert!((w4.get(1, 1) - 0.5625).abs() < 1e-15);

        for (m, n) in [(2, 2), (5, 9), (64, 17)] {
            assert_eq!(hanning_window(m, n).unwrap().get(0, 0), 0.0);
        }
    }

    #[test]
    fn window_symmetry_and_borders() {
        let (m, n) = (9, 6);
        let w = hanning_window(m, n).unwrap();
        for y in 0..n {
            for x in 0..m {
                assert!((w.get(x, y) - w.get(m - 1 - x, y)).abs() < 1e-15);
                assert!((w.get(x, y) - w.get(x, n - 1 - y)).abs() < 1e-15);
                assert!((0.0..=1.0).contains(&w.get(x, y)));
            }
            assert!(w.get(0, y).abs() < 1e-15 && w.get(m - 1, y).abs() < 1e-15);
        }
        let odd = hanning_window(7, 5).unwrap();
        let max = odd.weights().iter().copied().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn window_rejects_small() {
        assert!(hanning_window(1, 5).is_err());
        assert!(hanning_window(5, 0).is_err());
    }

    #[test]
    fn apply_window_examples() {
        let ones = raster(5, 4, |_, _| 1.0);
        let w = hanning_window(5, 4).unwrap();
        assert_eq!(apply_window(&ones, &w).unwrap().pixels(), w.weights());

        let full = raster(3, 3, |_, _| 4095.0);
        let out = apply_window(&full, &hanning_window(3, 3).unwrap()).unwrap();
        assert_eq!(out.get(1, 1), 4095.0);
        for (x, y) in [(0, 0), (1, 0), (2, 2), (0, 1)] {
            assert!(out.get(x, y).abs() < 1e-9);
        }

        assert!(matches!(
            apply_window(&full, &w),
            Err(SpectralError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_examples() {
        let zero = raster(4, 3, |_, _| 0.0);
        assert!(forward_dft(&zero).values().iter().all(|c| c.norm() == 0.0));

        let delta = raster(5, 3, |x, y| if (x, y) == (0, 0) { 1.0 } else { 0.0 });
        for c in forward_dft(&delta).values() {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }

        let c = 37.0;
        let constant = raster(4, 4, |_, _| c);
        let oracle = naive_dft(&constant, -1.0);
        let spec = forward_dft(&constant);
        assert!((oracle[0] - Complex64::new(16.0 * c, 0.0)).norm() < 1e-9);
        for (a, b) in spec.values().iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn forward_matches_direct_summation_on_odd_sizes() {
        for (m, n) in [(6, 5), (7, 3), (5, 10), (12, 9)] {
            let r = raster(m, n, |x, y| ((x * 131 + y * 71 + x * y * 13) % 97) as f64);
            let spec = forward_dft(&r);
            let oracle = naive_dft(&r, -1.0);
            let scale = oracle.iter().map(|c| c.norm()).fold(1.0, f64::max);
            for (a, b) in spec.values().iter().zip(&oracle) {
                assert!((a - b).norm() <= 1e-12 * scale, "{m}x{n}");
            }
        }
    }

    #[test]
    fn cross_power_examples() {
        let a = Spectrum::from_fn(3, 2, |u, v| Complex64::new(1.0 + u as f64, v as f64 - 0.5));
        let self_cp = cross_power_spectrum(&a, &a, CROSS_POWER_EPS).unwrap();
        for c in self_cp.values() {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-9);
        }

        let a = Spectrum::new(1, 1, vec![Complex64::new(2.0, 0.0)]).unwrap();
        let b = Spectrum::new(1, 1, vec![Complex64::new(0.0, 1.0)]).unwrap();
        let cp = cross_power_spectrum(&a, &b, CROSS_POWER_EPS).unwrap();
        assert!((cp.get(0, 0) - Complex64::new(0.0, -1.0)).norm() < 1e-9);
        assert!(cp.get(0, 0).norm() <= 1.0);

        let z = Spectrum::new(1, 1, vec![Complex64::default()]).unwrap();
        assert_eq!(cross_power_spectrum(&z, &z, 1e-12).unwrap().get(0, 0), Complex64::default());

        let other = Spectrum::from_fn(2, 3, |_, _| Complex64::new(1.0, 0.0));
        assert!(cross_power_spectrum(&self_cp, &other, CROSS_POWER_EPS).is_err());
    }

    #[test]
    fn inverse_examples() {
        let flat = Spectrum::from_fn(6, 4, |_, _| Complex64::new(1.0, 0.0));
        let surface = inverse_dft(&flat).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                let expect = if (x, y) == (0, 0) { 1.0 } else { 0.0 };
                assert!((surface.get(x, y) - expect).abs() < 1e-12);
            }
        }

        let m = 8;
        let shifted = Spectrum::from_fn(m, 5, |u, _| {
            Complex64::from_polar(1.0, -2.0 * PI * (2 * u) as f64 / m as f64)
        });
        let surface = inverse_dft(&shifted).unwrap();
        for y in 0..5 {
            for x in 0..m {
                let expect = if (x, y) == (2, 0) { 1.0 } else { 0.0 };
                assert!((surface.get(x, y) - expect).abs() < 1e-12);
            }
        }

        let zero = Spectrum::from_fn(4, 4, |_, _| Complex64::default());
        assert!(matches!(inverse_dft(&zero), Err(SpectralError::DegenerateSurface(_))));
    }

    fn impulse_surface(m: usize, n: usize, at: &[((usize, usize), f64)]) -> CorrelationSurface {
        let mut values = vec![0.0; m * n];
        for &((x, y), v) in at {
            values[y * m + x] = v;
        }
        CorrelationSurface::new(m, n, values).unwrap()
    }

    #[test]
    fn peak_examples() {
        assert_eq!(locate_peak(&impulse_surface(64, 64, &[((0, 0), 1.0)])), Displacement::ZERO);
        assert_eq!(
            locate_peak(&impulse_surface(64, 64, &[((61, 2), 1.0)])),
            Displacement::new(-3.0, 2.0)
        );

        let d = locate_peak(&impulse_surface(64, 64, &[((10, 10), 1.0), ((11, 10), 0.5)]));
        assert!((d.dx - (10.0 + 11.0 * 0.5) / 1.5).abs() < 1e-12);
        assert_eq!(d.dy, 10.0);
    }

    #[test]
    fn peak_neighborhood_wraps_and_clamps() {
        // Peak at column 0 with its left neighbor across the border.
        let d = locate_peak(&impulse_surface(16, 16, &[((0, 4), 1.0), ((15, 4), 1.0 / 3.0)]));
        assert!((d.dx + 0.25).abs() < 1e-12);

        let mut s = impulse_surface(16, 16, &[((5, 5), 1.0)]);
        s.values[5 * 16 + 6] = -0.8;
        assert_eq!(locate_peak(&s), Displacement::new(5.0, 5.0));
    }

    #[test]
    fn peak_tie_break_prefers_lowest_row_then_column() {
        let s = impulse_surface(32, 32, &[((20, 3), 1.0), ((4, 9), 1.0), ((2, 3), 1.0)]);
        // (2, 3) wins; (20, 3) and (4, 9) are outside its 5x5 neighborhood.
        assert_eq!(locate_peak(&s), Displacement::new(2.0, 3.0));
    }

    fn hash_noise(x: usize, y: usize) -> f64 {
        let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        h ^= h >> 31;
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 29;
        (h % 1000) as f64 / 1000.0
    }

    fn textured(m: usize, n: usize) -> Raster {
        raster(m, n, |x, y| {
            let (xf, yf) = (x as f64, y as f64);
            2000.0 + 400.0 * (xf * 0.21 + 0.3 * yf).sin() + 1200.0 * hash_noise(x, y)
        })
    }

    #[test]
    fn self_correlation_is_zero() {
        let r = textured(96, 80);
        let d = phase_correlate(&r, &r).unwrap();
        assert!(d.dx.abs() < 1e-6 && d.dy.abs() < 1e-6, "{d}");
    }

    #[test]
    fn recovers_integer_and_half_pixel_shifts() {
        use crate::raster::{shift_raster, ShiftMode};
        let r = textured(128, 96);
        let cases = [(Displacement::new(7.0, -3.0), 0.05), (Displacement::new(3.5, 0.0), 0.25)];
        for (truth, tol) in cases {
            let moved = shift_raster(&r, truth, ShiftMode::Circular, 0.0).unwrap();
            let d = phase_correlate(&r, &moved).unwrap();
            assert!((d.dx - truth.dx).abs() <= tol && (d.dy - truth.dy).abs() <= tol, "{d} vs {truth}");
        }
    }

    #[test]
    fn correlator_matches_composed_operations() {
        use crate::raster::{shift_raster, ShiftMode};
        let a = textured(45, 38);
        let b = shift_raster(&a, Displacement::new(5.25, -2.5), ShiftMode::Circular, 0.0).unwrap();
        let w = hanning_window(45, 38).unwrap();
        let s1 = forward_dft(&apply_window(&a, &w).unwrap());
        let s2 = forward_dft(&apply_window(&b, &w).unwrap());
        let composed = inverse_dft(&cross_power_spectrum(&s2, &s1, CROSS_POWER_EPS).unwrap()).unwrap();
        let fused = PhaseCorrelator::new(45, 38).unwrap().surface(&a, &b).unwrap();
        for (x, y) in composed.values().iter().zip(fused.values()) {
            assert!((x - y).abs() < 1e-9);
        }
        let (d1, d2) = (locate_peak(&composed), locate_peak(&fused));
        assert!((d1 - d2).norm() < 1e-9);
    }

    #[test]
    fn reused_reference_matches_plain_correlation() {
        use crate::raster::{shift_raster, ShiftMode};
        let a = textured(64, 48);
        let c = PhaseCorrelator::new(64, 48).unwrap();
        let reference = c.reference(&a).unwrap();
        for d in [Displacement::new(3.0, -2.0), Displacement::new(-7.5, 4.25)] {
            let b = shift_raster(&a, d, ShiftMode::Circular, 0.0).unwrap();
            assert_eq!(c.correlate_with(&reference, &b).unwrap(), c.correlate(&a, &b).unwrap());
        }
        assert!(matches!(
            c.correlate_with(&reference, &textured(48, 64)),
            Err(SpectralError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn correlate_rejects_mismatched_sizes() {
        assert!(matches!(
            phase_correlate(&textured(10, 8), &textured(8, 10)),
            Err(SpectralError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn correlator_is_deterministic() {
        let a = textured(60, 45);
        let b = crate::raster::shift_raster(&a, Displacement::new(-4.0, 6.0), crate::raster::ShiftMode::Circular, 0.0)
            .unwrap();
        let c = PhaseCorrelator::new(60, 45).unwrap();
        let first = c.correlate(&a, &b).unwrap();
        for _ in 0..3 {
            let again = c.correlate(&a, &b).unwrap();
            assert_eq!(first.dx.to_bits(), again.dx.to_bits());
            assert_eq!(first.dy.to_bits(), again.dy.to_bits());
        }
        assert_eq!(phase_correlate(&a, &b).unwrap(), first);
    }
}

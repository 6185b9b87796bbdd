mod common;

use common::textured;
use lenslabel::raster::shift_raster;
use lenslabel::spectral::{
    forward_dft, inverse_dft_raw, locate_peak, phase_correlate, CorrelationSurface,
};
use lenslabel::{Displacement, ShiftMode};
use proptest::prelude::*;

fn parseval_error(r: &lenslabel::Raster) -> f64 {
    let spatial: f64 = r.pixels().iter().map(|p| p * p).sum();
    let s = forward_dft(r);
    let spectral: f64 = s.values().iter().map(|c| c.norm_sqr()).sum::<f64>() / r.pixels().len() as f64;
    (spatial - spectral).abs() / spatial
}

fn round_trip_error(r: &lenslabel::Raster) -> f64 {
    let back = inverse_dft_raw(&forward_dft(r));
    r.pixels()
        .iter()
        .zip(&back)
        .map(|(p, c)| (p - c.re).abs().max(c.im.abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn integer_shifts_are_recovered(seed in 0u64..1000, a in -13i32..=13, b in -10i32..=10) {
        // Shifts stay near 5% of the frame, as in the full-size setting.
        let r = textured(256, 192, seed);
        let d = Displacement::new(a as f64, b as f64);
        let moved = shift_raster(&r, d, ShiftMode::Circular, 0.0).unwrap();
        let est = phase_correlate(&r, &moved).unwrap();
        prop_assert!((est.dx - d.dx).abs() <= 0.05 && (est.dy - d.dy).abs() <= 0.05, "{est} vs {d}");
    }

    #[test]
    fn swapping_inputs_negates_the_estimate(seed in 0u64..1000, dx in -12.0f64..12.0, dy in -12.0f64..12.0) {
        let r = textured(80, 64, seed);
        let moved = shift_raster(&r, Displacement::new(dx, dy), ShiftMode::Circular, 0.0).unwrap();
        let fwd = phase_correlate(&r, &moved).unwrap();
        let back = phase_correlate(&moved, &r).unwrap();
        prop_assert!((fwd + back).norm() <= 0.1, "{fwd} vs {back}");
    }

    #[test]
    fn parseval_and_round_trip_hold(seed in 0u64..1000, w in 2usize..70, h in 2usize..70) {
        let r = textured(w, h, seed);
        prop_assert!(parseval_error(&r) <= 1e-9);
        let max = r.pixels().iter().copied().fold(0.0, f64::max);
        prop_assert!(round_trip_error(&r) <= 1e-9 * (w * h) as f64 * max);
    }

    #[test]
    fn peak_stays_within_half_range_plus_radius(
        w in 5usize..40,
        h in 5usize..40,
        values in proptest::collection::vec(-1.0f64..1.0, 1600),
    ) {
        let mut v = values[..w * h].to_vec();
        v[0] = 1.0;
        let c = CorrelationSurface::new(w, h, v).unwrap();
        let p = locate_peak(&c);
        prop_assert!(p.dx.abs() <= w as f64 / 2.0 + 2.5);
        prop_assert!(p.dy.abs() <= h as f64 / 2.0 + 2.5);
    }
}

#[test]
fn transforms_hold_on_odd_and_full_sizes() {
    for (w, h) in [(97, 61), (1280, 960)] {
        let r = textured(w, h, 7);
        assert!(parseval_error(&r) <= 1e-9);
        let max = r.pixels().iter().copied().fold(0.0, f64::max);
        assert!(round_trip_error(&r) <= 1e-9 * max);
    }
}

#![allow(dead_code)]

use lenslabel::{BitDepth, Raster};

/// Deterministic per-pixel hash in `[0, 1)`.
pub fn hash_noise(x: i64, y: i64, seed: u64) -> f64 {
    let mut z = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ seed.wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Broadband texture filling most of the 12-bit range.
pub fn textured(w: usize, h: usize, seed: u64) -> Raster {
    Raster::from_fn(w, h, BitDepth::Twelve, |x, y| {
        (200.0 + 3600.0 * hash_noise(x as i64, y as i64, seed)).round()
    })
    .unwrap()
}

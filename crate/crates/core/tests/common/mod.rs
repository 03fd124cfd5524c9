#![allow(dead_code)]

use lnet_core::fht::{GrayImage, HoughMap};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pixels uniform in `[lo, hi)`.
pub fn random_image(n: usize, rng: &mut impl Rng, lo: f64, hi: f64) -> GrayImage {
    GrayImage::new(n, (0..n * n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_map(n: usize, rng: &mut impl Rng) -> HoughMap {
    let len = 4 * n * (2 * n - 1);
    HoughMap::from_vec(n, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

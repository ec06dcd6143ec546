//! Analytic test textures shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::Frame;

/// Sum of seeded sinusoids with 8–30 px wavelengths, values within `[0.1, 0.9]`.
pub(crate) fn texture_fn(seed: u64) -> impl Fn(f64, f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> = (0..24)
        .map(|_| {
            let wavelength = rng.random_range(8.0..30.0);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / wavelength;
            (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let scale = 0.4 / (waves.len() as f64).sqrt() / 1.5;
    move |x, y| {
        let s: f64 = waves.iter().map(|(kx, ky, ph)| (kx * x + ky * y + ph).sin()).sum();
        (0.5 + scale * s).clamp(0.1, 0.9)
    }
}

pub(crate) fn smooth_texture(w: usize, h: usize, seed: u64) -> Frame<f64> {
    shifted_texture(w, h, seed, 0.0, 0.0)
}

/// The texture of `smooth_texture` translated by `(dx, dy)`.
pub(crate) fn shifted_texture(w: usize, h: usize, seed: u64, dx: f64, dy: f64) -> Frame<f64> {
    let f = texture_fn(seed);
    Frame::from_fn(w, h, 0, |x, y| f(x as f64 - dx, y as f64 - dy)).unwrap()
}

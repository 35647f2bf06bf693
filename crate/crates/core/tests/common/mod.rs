#![allow(dead_code)]

use std::path::PathBuf;

use photonpano::config::{SimConfig, TrajectorySpec};
use photonpano::image::LinearImage;
use photonpano::trajectory::Knot;
use photonpano::warp::{WarpParams, WarpedImage};

pub fn sim_config(n: usize, fov: (usize, usize), flux: f64, trajectory: TrajectorySpec, seed: u64) -> SimConfig {
    SimConfig {
        panorama_path: PathBuf::new(),
        fov_width: fov.0,
        fov_height: fov.1,
        num_frames: n,
        tau: 1.0,
        flux_at_white: flux,
        trajectory,
        seed,
        read_noise_sigma: 0.0,
        rgb_exposure_frames: 0,
    }
}

pub fn static_at(n: usize, x: f64, y: f64) -> TrajectorySpec {
    TrajectorySpec::fixed(n, WarpParams::translation(x, y))
}

/// Spline through `(t, x, y)` translations.
pub fn translation_path(points: &[(f64, f64, f64)]) -> TrajectorySpec {
    TrajectorySpec::spline(
        points
            .iter()
            .map(|&(t, x, y)| Knot::new(t, WarpParams::translation(x, y)))
            .collect(),
    )
}

/// Smooth band-limited texture with features at several scales.
pub fn texture(width: usize, height: usize, seed: u64) -> LinearImage<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut rnd = || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let waves: Vec<(f64, f64, f64, f64)> = (0..24)
        .map(|_| {
            let ang = rnd() * std::f64::consts::TAU;
            let freq = 0.03 + 0.25 * rnd();
            (freq * ang.cos(), freq * ang.sin(), rnd() * std::f64::consts::TAU, 0.3 + rnd())
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let vals = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            let s: f64 = waves.iter().map(|(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin()).sum();
            (0.5 + 0.9 * s / norm).clamp(0.02, 1.0)
        })
        .collect();
    LinearImage::from_values(width, height, vals)
}

pub fn as_image(w: WarpedImage<f64>) -> LinearImage<f64> {
    LinearImage {
        width: w.width,
        height: w.height,
        saturated: vec![false; w.values.len()],
        values: w
            .values
            .iter()
            .zip(&w.weights)
            .map(|(v, c)| if *c > 0.0 { v / c } else { 0.0 })
            .collect(),
        weights: w.weights,
    }
}

/// Tiny deterministic generator for test inputs.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

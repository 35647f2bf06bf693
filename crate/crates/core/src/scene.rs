//! Ground-truth scenes: panorama file I/O and procedural test patterns.
//!
//! Scenes are linear intensities where 1.0 is white.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{Error, Result};
use crate::image::LinearImage;
use crate::tone::{linear_to_srgb, luminance, srgb_code_to_linear, srgb_to_linear};

/// Loads an 8-bit grayscale or sRGB PNG/PGM as linear luminance.
pub fn load_panorama(path: impl AsRef<Path>) -> Result<LinearImage<f64>> {
    let img = image::open(path.as_ref())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let lut: Vec<f64> = (0..=255u8).map(srgb_code_to_linear).collect();
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        return Ok(srgb_to_linear(w, h, img.to_luma8().as_raw()));
    }
    let rgb = img.to_rgb8();
    let values = rgb
        .pixels()
        .map(|p| luminance(lut[p[0] as usize], lut[p[1] as usize], lut[p[2] as usize]))
        .collect();
    Ok(LinearImage::from_values(w, h, values))
}

/// Writes a scene as 8-bit sRGB grayscale; the format follows the extension
/// (`.pgm` or `.png`).
pub fn save_panorama(scene: &LinearImage<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(scene.width as u32, scene.height as u32, linear_to_srgb(scene))
        .ok_or_else(|| Error::arg("scene buffer size mismatch"))?;
    let format = ImageFormat::from_path(path)?;
    img.save_with_format(path, format)?;
    Ok(())
}

/// The scene as it reads back after an 8-bit sRGB round trip.
pub fn quantize_srgb(scene: &LinearImage<f64>) -> LinearImage<f64> {
    srgb_to_linear(scene.width, scene.height, &linear_to_srgb(scene))
}

fn hash2(seed: u64, x: i64, y: i64) -> f64 {
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (u, v) = (x / cell, y / cell);
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(fx), s(fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash2(seed, ix, iy);
    let b = hash2(seed, ix + 1, iy);
    let c = hash2(seed, ix, iy + 1);
    let d = hash2(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

/// Non-repeating multi-scale texture with scattered hard-edged blobs, in
/// `[0.03, 1]`.
pub fn textured(width: usize, height: usize, seed: u64) -> LinearImage<f64> {
    let octaves = [(48.0, 1.0), (24.0, 0.6), (12.0, 0.4), (6.0, 0.25)];
    let norm: f64 = octaves.iter().map(|o| o.1).sum();
    let mut values = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let mut n = 0.0;
            for (k, (cell, amp)) in octaves.iter().enumerate() {
                n += amp * value_noise(seed.wrapping_add(k as u64 * 7919), xf, yf, *cell);
            }
            values[y * width + x] = n / norm;
        }
    }
    // blobs: discs of constant brightness every ~40 px on average
    let blobs = (width * height / 1600).max(1);
    for b in 0..blobs as i64 {
        let cx = hash2(seed ^ 0xB10B, b, 0) * width as f64;
        let cy = hash2(seed ^ 0xB10B, b, 1) * height as f64;
        let r = 3.0 + 9.0 * hash2(seed ^ 0xB10B, b, 2);
        let level = hash2(seed ^ 0xB10B, b, 3);
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(width));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(height));
        for y in y0..y1 {
            for x in x0..x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 <= r * r {
                    values[y * width + x] = level;
                }
            }
        }
    }
    // stretch contrast to the full range
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = (hi - lo).max(1e-12);
    for v in &mut values {
        let t = (*v - lo) / span;
        *v = 0.03 + 0.97 * t * t;
    }
    LinearImage::from_values(width, height, values)
}

/// Dead-leaves texture: opaque discs of random gray level with power-law
/// distributed radii in `[r_min, r_max]`, stacked until the plane is covered.
/// Edges at every scale make it a good stand-in for natural scenes. Values lie
/// in `[lo, hi]`.
pub fn dead_leaves(width: usize, height: usize, seed: u64, r_min: f64, r_max: f64, lo: f64, hi: f64) -> LinearImage<f64> {
    let mut values = vec![f64::NAN; width * height];
    let mut uncovered = width * height;
    let mut k: i64 = 0;
    // discs are painted front to back, only onto uncovered pixels
    while uncovered > 0 && k < 50_000_000 {
        let u = hash2(seed ^ 0xD1_5C, k, 0);
        // density proportional to r^-3 between r_min and r_max
        let a = r_min.powi(-2);
        let b = r_max.powi(-2);
        let r = (a - u * (a - b)).powf(-0.5);
        let cx = hash2(seed ^ 0xD1_5C, k, 1) * (width as f64 + 2.0 * r) - r;
        let cy = hash2(seed ^ 0xD1_5C, k, 2) * (height as f64 + 2.0 * r) - r;
        let level = lo + (hi - lo) * hash2(seed ^ 0xD1_5C, k, 3);
        k += 1;
        let x0 = (cx - r).floor().max(0.0) as usize;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil().max(0.0) as usize).min(width);
        let y1 = ((cy + r).ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * width + x;
                if values[i].is_nan() && (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    values[i] = level;
                    uncovered -= 1;
                }
            }
        }
    }
    for v in &mut values {
        if v.is_nan() {
            *v = lo;
        }
    }
    LinearImage::from_values(width, height, values)
}

/// Checkerboard with square cells of `cell` pixels, starting dark at the
/// origin.
pub fn checkerboard(width: usize, height: usize, cell: usize, dark: f64, bright: f64) -> LinearImage<f64> {
    let cell = cell.max(1);
    let values = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            if (x / cell + y / cell) % 2 == 0 {
                dark
            } else {
                bright
            }
        })
        .collect();
    LinearImage::from_values(width, height, values)
}

/// Left half `dark`, right half (from column `width / 2`) `bright`.
pub fn two_region(width: usize, height: usize, dark: f64, bright: f64) -> LinearImage<f64> {
    let values = (0..width * height)
        .map(|i| if i % width < width / 2 { dark } else { bright })
        .collect();
    LinearImage::from_values(width, height, values)
}

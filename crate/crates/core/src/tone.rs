//! sRGB transfer function and display tone mapping.

use crate::image::LinearImage;
use crate::scalar::Real;

/// sRGB code value in `[0, 1]` to linear intensity.
#[inline]
pub fn srgb_decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear intensity in `[0, 1]` to sRGB code value in `[0, 1]`.
#[inline]
pub fn srgb_encode(l: f64) -> f64 {
    if l <= 0.0031308 {
        l * 12.92
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
pub fn srgb_code_to_linear(code: u8) -> f64 {
    srgb_decode(code as f64 / 255.0)
}

#[inline]
pub fn linear_to_srgb_code(l: f64) -> u8 {
    (srgb_encode(l.clamp(0.0, 1.0)) * 255.0).round() as u8
}

/// Decodes an 8-bit sRGB grayscale raster into linear intensities.
pub fn srgb_to_linear<T: Real>(width: usize, height: usize, codes: &[u8]) -> LinearImage<T> {
    assert_eq!(codes.len(), width * height);
    // 256-entry table keeps decoding exact and cheap
    let lut: Vec<T> = (0..=255u8).map(|c| T::lit(srgb_code_to_linear(c))).collect();
    LinearImage::from_values(width, height, codes.iter().map(|&c| lut[c as usize]).collect())
}

/// Encodes linear intensities (clamped to `[0, 1]`) as 8-bit sRGB codes.
pub fn linear_to_srgb<T: Real>(img: &LinearImage<T>) -> Vec<u8> {
    img.values.iter().map(|v| linear_to_srgb_code(v.as_f64())).collect()
}

/// Rec. 709 luminance of linear RGB.
#[inline]
pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.2126 * r + 0.7152 * g + 0.0722 * b
}

/// 8-bit display rendering plus a validity mask (255 where data exists).
#[derive(Debug, Clone, PartialEq)]
pub struct Tonemapped {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u8>,
    pub mask: Vec<u8>,
}

pub fn tonemap<T: Real>(img: &LinearImage<T>, exposure: f64) -> Tonemapped {
    let mut codes = Vec::with_capacity(img.len());
    let mut mask = Vec::with_capacity(img.len());
    for i in 0..img.len() {
        if img.has_data(i) {
            codes.push(linear_to_srgb_code(exposure * img.values[i].as_f64()));
            mask.push(255);
        } else {
            codes.push(0);
            mask.push(0);
        }
    }
    Tonemapped {
        width: img.width,
        height: img.height,
        codes,
        mask,
    }
}

/// `q`-quantile (0..=1) of the flux over pixels with data, or `None` if the
/// image has no data.
pub fn flux_percentile<T: Real>(img: &LinearImage<T>, q: f64) -> Option<f64> {
    let mut v: Vec<f64> = (0..img.len())
        .filter(|&i| img.has_data(i))
        .map(|i| img.values[i].as_f64())
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((v.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    Some(v[idx])
}

/// Default display exposure: maps the 99th-percentile flux to white.
pub fn default_exposure<T: Real>(img: &LinearImage<T>) -> f64 {
    match flux_percentile(img, 0.99) {
        Some(p) if p > 0.0 => 1.0 / p,
        _ => 1.0,
    }
}

//! Floating point images and the photon-counting flux estimator.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-pixel fraction of binary frames that recorded a detection, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionImage<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
}

impl<T: Real> FractionImage<T> {
    pub fn new(width: usize, height: usize, values: Vec<T>) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[y * self.width + x]
    }
}

/// Linear flux image (photons per second) with a per-pixel sample weight.
///
/// Pixels whose weight is zero carry no data. `saturated` marks pixels whose
/// every binary sample was a detection; their flux is a clamped lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    pub weights: Vec<T>,
    pub saturated: Vec<bool>,
}

impl<T: Real> LinearImage<T> {
    /// Image with unit weight everywhere.
    pub fn from_values(width: usize, height: usize, values: Vec<T>) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            weights: vec![T::one(); values.len()],
            saturated: vec![false; values.len()],
            values,
        }
    }

    pub fn constant(width: usize, height: usize, value: T) -> Self {
        Self::from_values(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![T::zero(); width * height],
            weights: vec![T::zero(); width * height],
            saturated: vec![false; width * height],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn has_data(&self, i: usize) -> bool {
        self.weights[i] > T::zero()
    }

    /// Fraction of pixels with nonzero weight.
    pub fn coverage(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let n = self.weights.iter().filter(|w| **w > T::zero()).count();
        n as f64 / self.len() as f64
    }

    /// Multiplies every value by `k`, leaving weights untouched.
    pub fn scaled(&self, k: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = *v * k);
        out
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn cast<U: Real>(&self) -> LinearImage<U> {
        LinearImage {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            weights: self.weights.iter().map(|v| U::lit(v.as_f64())).collect(),
            saturated: self.saturated.clone(),
        }
    }

    /// Rectangular crop; pixels outside the source are no-data.
    pub fn crop(&self, x0: isize, y0: isize, width: usize, height: usize) -> Self {
        let mut out = Self::zeros(width, height);
        for y in 0..height {
            let sy = y0 + y as isize;
            if sy < 0 || sy >= self.height as isize {
                continue;
            }
            for x in 0..width {
                let sx = x0 + x as isize;
                if sx < 0 || sx >= self.width as isize {
                    continue;
                }
                let s = self.index(sx as usize, sy as usize);
                let d = y * width + x;
                out.values[d] = self.values[s];
                out.weights[d] = self.weights[s];
                out.saturated[d] = self.saturated[s];
            }
        }
        out
    }
}

/// Largest detection fraction accepted by the estimator for `n` samples.
///
/// A pixel that fired in every frame has an unbounded likelihood maximum;
/// half a count of continuity correction keeps it finite. Fewer than one
/// sample is treated as one.
#[inline]
pub fn saturation_fraction<T: Real>(n: T) -> T {
    let n = n.max(T::one());
    T::one() - T::one() / (T::lit(2.0) * n)
}

/// Flux estimate for one pixel; returns `(flux, saturated)`.
#[inline]
pub fn flux_from_fraction<T: Real>(fraction: T, tau: T, n: T) -> (T, bool) {
    let cap = saturation_fraction(n);
    let fraction = fraction.max(T::zero());
    let (f, sat) = if fraction >= cap {
        (cap, true)
    } else {
        (fraction, false)
    };
    (-(T::one() - f).ln() / tau, sat)
}

/// Maximum-likelihood flux from a detection fraction averaged over `n` frames.
pub fn mle_flux<T: Real>(mean: &FractionImage<T>, tau: T, n: usize) -> Result<LinearImage<T>> {
    if n == 0 {
        return Err(Error::arg("mle_flux needs at least one sample"));
    }
    let weights = vec![T::from_usize_lossy(n); mean.values.len()];
    mle_flux_weighted(mean, &weights, tau)
}

/// As [`mle_flux`], with a per-pixel effective sample count. Pixels with
/// zero weight come out as no-data.
pub fn mle_flux_weighted<T: Real>(
    mean: &FractionImage<T>,
    weights: &[T],
    tau: T,
) -> Result<LinearImage<T>> {
    if !(tau > T::zero()) {
        return Err(Error::arg("exposure tau must be positive"));
    }
    if weights.len() != mean.values.len() {
        return Err(Error::arg("weight map size does not match image"));
    }
    let mut out = LinearImage::zeros(mean.width, mean.height);
    for (i, (&m, &w)) in mean.values.iter().zip(weights).enumerate() {
        if !(m >= T::zero() && m <= T::one()) {
            return Err(Error::arg(format!("fraction {m} outside [0, 1]")));
        }
        if w > T::zero() {
            let (flux, sat) = flux_from_fraction(m, tau, w);
            out.values[i] = flux;
            out.saturated[i] = sat;
            out.weights[i] = w;
        }
    }
    Ok(out)
}

/// Expected detection probability of a pixel with flux `phi` over exposure `tau`.
#[inline]
pub fn detection_probability<T: Real>(phi: T, tau: T) -> T {
    -(-(phi * tau)).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> FractionImage<f64> {
        FractionImage::new(1, 1, vec![v])
    }

    #[test]
    fn zero_fraction_is_zero_flux() {
        let img = mle_flux(&single(0.0), 1.0, 10).unwrap();
        assert_eq!(img.values[0], 0.0);
        assert!(!img.saturated[0]);
        assert_eq!(img.weights[0], 10.0);
    }

    #[test]
    fn inverts_bernoulli_probability() {
        let m = 1.0 - (-0.5f64).exp();
        let img = mle_flux(&single(m), 1.0, 100).unwrap();
        assert!((img.values[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn saturated_pixel_is_clamped_and_flagged() {
        let img = mle_flux(&single(1.0), 1.0, 1000).unwrap();
        assert!((img.values[0] - 7.600902459542082).abs() < 1e-9);
        assert!(img.saturated[0]);
    }

    #[test]
    fn tau_scales_flux() {
        let m = 1.0 - (-0.5f64).exp();
        let img = mle_flux(&single(m), 1e-5, 100).unwrap();
        assert!((img.values[0] - 0.5e5).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(mle_flux(&single(0.5), 0.0, 1).is_err());
        assert!(mle_flux(&single(0.5), 1.0, 0).is_err());
        assert!(mle_flux(&single(1.5), 1.0, 1).is_err());
    }

    #[test]
    fn zero_weight_is_no_data() {
        let f = FractionImage::new(2, 1, vec![0.3, 0.0]);
        let img = mle_flux_weighted(&f, &[4.0, 0.0], 1.0).unwrap();
        assert!(img.has_data(0));
        assert!(!img.has_data(1));
    }

    #[test]
    fn works_in_single_precision() {
        let m = 1.0 - (-0.5f32).exp();
        let img = mle_flux(&FractionImage::new(1, 1, vec![m]), 1.0f32, 100).unwrap();
        assert!((img.values[0] - 0.5).abs() < 1e-5);
    }
}

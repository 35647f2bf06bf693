//! Eight-parameter projective warps and inverse-mapped bilinear resampling.
//!
//! Coordinates: pixel centers sit at integer positions, the origin is the
//! center of the top-left pixel, x grows right and y grows down. Every module
//! shares this convention.

use crate::cube::BinaryFrame;
use crate::error::{Error, Result};
use crate::image::{FractionImage, LinearImage};
use crate::scalar::Real;

const DET_EPS: f64 = 1e-12;

/// Warp parameters `p1..p8`; the homography is
///
/// ```text
/// [1+p1  p3   p5]
/// [ p2  1+p4  p6]
/// [ p7   p8   1 ]
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WarpParams<T>(pub [T; 8]);

impl<T: Real> WarpParams<T> {
    pub fn zero() -> Self {
        Self([T::zero(); 8])
    }

    pub fn translation(tx: T, ty: T) -> Self {
        let mut p = [T::zero(); 8];
        p[4] = tx;
        p[5] = ty;
        Self(p)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Real>(&self) -> WarpParams<U> {
        WarpParams(self.0.map(|v| U::lit(v.as_f64())))
    }
}

/// 3x3 projective matrix kept in normalized form (`m[2][2] == 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography<T> {
    m: [[T; 3]; 3],
}

impl<T: Real> Homography<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn translation(tx: T, ty: T) -> Self {
        let mut h = Self::identity();
        h.m[0][2] = tx;
        h.m[1][2] = ty;
        h
    }

    /// Normalizes an arbitrary matrix; fails when `m[2][2]` vanishes or the
    /// result is singular.
    pub fn from_matrix(m: [[T; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::degenerate("non-finite matrix entry"));
        }
        let s = m[2][2];
        if s.abs() <= T::lit(f64::EPSILON) * frob(&m) || s == T::zero() {
            return Err(Error::degenerate("m[2][2] is zero; cannot normalize"));
        }
        let mut n = m;
        for row in n.iter_mut() {
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        n[2][2] = T::one();
        let h = Self { m: n };
        if h.det().abs() <= T::lit(DET_EPS) {
            return Err(Error::degenerate(format!("determinant {} too small", h.det())));
        }
        Ok(h)
    }

    pub fn from_params(p: &WarpParams<T>) -> Result<Self> {
        if !p.is_finite() {
            return Err(Error::degenerate("non-finite warp parameter"));
        }
        let o = T::one();
        let p = p.0;
        Self::from_matrix([
            [o + p[0], p[2], p[4]],
            [p[1], o + p[3], p[5]],
            [p[6], p[7], o],
        ])
    }

    pub fn to_params(&self) -> WarpParams<T> {
        let m = &self.m;
        let o = T::one();
        WarpParams([
            m[0][0] - o,
            m[1][0],
            m[0][1],
            m[1][1] - o,
            m[0][2],
            m[1][2],
            m[2][0],
            m[2][1],
        ])
    }

    pub fn matrix(&self) -> &[[T; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> T {
        det3(&self.m)
    }

    /// `self` after `other`: maps `x` to `self(other(x))`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        Self::from_matrix(matmul(&self.m, &other.m))
    }

    pub fn invert(&self) -> Result<Self> {
        let m = &self.m;
        let det = self.det();
        if !(det.abs() > T::lit(DET_EPS)) {
            return Err(Error::degenerate("singular homography"));
        }
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Self::from_matrix(adj)
    }

    /// Maps a point; the homogeneous denominator may be any sign.
    #[inline]
    pub fn map(&self, x: T, y: T) -> (T, T) {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }

    /// Maps a point that must lie in front of the camera plane.
    pub fn try_map(&self, x: T, y: T) -> Result<(T, T)> {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if !(w > T::zero()) {
            return Err(Error::degenerate(format!(
                "point ({x}, {y}) maps behind the camera plane"
            )));
        }
        Ok(self.map(x, y))
    }

    /// `M * self * M^-1` for the similarity `M(x) = scale * x + (tx, ty)`.
    pub fn conjugate_similarity(&self, scale: T, tx: T, ty: T) -> Self {
        let m = &self.m;
        let (s, o) = (scale, T::one());
        // M * H
        let mh = [
            [s * m[0][0] + tx * m[2][0], s * m[0][1] + tx * m[2][1], s * m[0][2] + tx * m[2][2]],
            [s * m[1][0] + ty * m[2][0], s * m[1][1] + ty * m[2][1], s * m[1][2] + ty * m[2][2]],
            [m[2][0], m[2][1], m[2][2]],
        ];
        // (M * H) * M^-1 with M^-1(x) = (x - t) / s
        let inv_s = o / s;
        let mut out = [[T::zero(); 3]; 3];
        for r in 0..3 {
            out[r][0] = mh[r][0] * inv_s;
            out[r][1] = mh[r][1] * inv_s;
            out[r][2] = mh[r][2] - (mh[r][0] * tx + mh[r][1] * ty) * inv_s;
        }
        let k = out[2][2];
        for row in out.iter_mut() {
            for v in row.iter_mut() {
                *v = *v / k;
            }
        }
        out[2][2] = T::one();
        Self { m: out }
    }

    pub fn cast<U: Real>(&self) -> Homography<U> {
        Homography {
            m: self.m.map(|r| r.map(|v| U::lit(v.as_f64()))),
        }
    }
}

/// Expresses a warp in the coordinates of an `s`-times upsampled grid:
/// returns `S * w * S^-1` with `S = diag(s, s, 1)`.
pub fn scale_warp<T: Real>(w: &Homography<T>, s: T) -> Homography<T> {
    assert!(s > T::zero(), "scale must be positive");
    let m = w.m;
    Homography {
        m: [
            [m[0][0], m[0][1], m[0][2] * s],
            [m[1][0], m[1][1], m[1][2] * s],
            [m[2][0] / s, m[2][1] / s, m[2][2]],
        ],
    }
}

fn frob<T: Real>(m: &[[T; 3]; 3]) -> T {
    m.iter().flatten().map(|&v| v * v).sum::<T>().sqrt()
}

fn det3<T: Real>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn matmul<T: Real>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

/// A pixel grid that can be resampled: each texel is `(value, validity)`.
pub trait Texture<T> {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn texel(&self, x: usize, y: usize) -> (T, T);
}

impl<T: Real> Texture<T> for BinaryFrame<'_> {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    #[inline(always)]
    fn texel(&self, x: usize, y: usize) -> (T, T) {
        (if self.get(x, y) != 0 { T::one() } else { T::zero() }, T::one())
    }
}

impl<T: Real> Texture<T> for LinearImage<T> {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    #[inline(always)]
    fn texel(&self, x: usize, y: usize) -> (T, T) {
        let i = y * self.width + x;
        if self.weights[i] > T::zero() {
            (self.values[i], T::one())
        } else {
            (T::zero(), T::zero())
        }
    }
}

impl<T: Real> Texture<T> for FractionImage<T> {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    #[inline(always)]
    fn texel(&self, x: usize, y: usize) -> (T, T) {
        (self.values[y * self.width + x], T::one())
    }
}

/// Bilinear sample at a real position. Returns the unnormalized value sum and
/// the interpolated validity; out-of-bounds taps contribute nothing.
#[inline(always)]
pub fn sample_bilinear<T: Real, S: Texture<T> + ?Sized>(src: &S, x: T, y: T) -> (T, T) {
    let (w, h) = (src.width() as isize, src.height() as isize);
    let zero = T::zero();
    if !(x > -T::one() && y > -T::one() && x < T::from_usize_lossy(w as usize) && y < T::from_usize_lossy(h as usize))
    {
        return (zero, zero);
    }
    let xf = x.floor();
    let yf = y.floor();
    let fx = x - xf;
    let fy = y - yf;
    let x0 = xf.to_isize().unwrap();
    let y0 = yf.to_isize().unwrap();
    let one = T::one();
    let taps = [
        (x0, y0, (one - fx) * (one - fy)),
        (x0 + 1, y0, fx * (one - fy)),
        (x0, y0 + 1, (one - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    let mut v = zero;
    let mut m = zero;
    for (tx, ty, c) in taps {
        if c == zero || tx < 0 || ty < 0 || tx >= w || ty >= h {
            continue;
        }
        let (val, mask) = src.texel(tx as usize, ty as usize);
        v = v + c * val * mask;
        m = m + c * mask;
    }
    (v, m)
}

/// Output of [`apply_warp`].
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedImage<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    pub weights: Vec<T>,
}

/// Inverse-warps `src` onto an output grid: output pixel `x` samples the
/// source at `w^-1(x + offset)`.
pub fn apply_warp<T: Real, S: Texture<T> + ?Sized>(
    src: &S,
    w: &Homography<T>,
    out_width: usize,
    out_height: usize,
    offset: (T, T),
) -> Result<WarpedImage<T>> {
    let inv = w.invert()?;
    let mut values = vec![T::zero(); out_width * out_height];
    let mut weights = vec![T::zero(); out_width * out_height];
    accumulate_warp(
        src,
        &inv,
        Region::full(out_width, out_height),
        offset,
        &mut values,
        &mut weights,
    );
    Ok(WarpedImage {
        width: out_width,
        height: out_height,
        values,
        weights,
    })
}

/// Axis-aligned block of an output canvas with row stride `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub stride: usize,
}

impl Region {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
            stride: width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }
}

/// Adds the inverse-warped source into `sum`/`weight` over `region`.
///
/// `inv` maps canvas coordinates (pixel index plus `offset`) to source
/// coordinates. Buffers are indexed `y * region.stride + x` with `y` and `x`
/// relative to the start of the buffers, so a band of rows can be passed by
/// shifting `offset` and `y0`.
pub fn accumulate_warp<T: Real, S: Texture<T> + ?Sized>(
    src: &S,
    inv: &Homography<T>,
    region: Region,
    offset: (T, T),
    sum: &mut [T],
    weight: &mut [T],
) {
    accumulate(src, inv, region, offset, sum, weight, T::zero());
}

/// As [`accumulate_warp`], but drops samples whose bilinear footprint is not
/// entirely inside the source.
///
/// A partially covered sample carries the value of the in-bounds taps at the
/// position of the sample, i.e. displaced by up to a pixel. Averaged over a
/// moving sequence this distorts the soft border of the result, which
/// registration then reads as a small perspective change.
pub fn accumulate_warp_interior<T: Real, S: Texture<T> + ?Sized>(
    src: &S,
    inv: &Homography<T>,
    region: Region,
    offset: (T, T),
    sum: &mut [T],
    weight: &mut [T],
) {
    // the four tap weights of a full footprint sum to one up to rounding
    let min_mass = T::one() - T::lit(64.0) * T::epsilon();
    accumulate(src, inv, region, offset, sum, weight, min_mass);
}

fn accumulate<T: Real, S: Texture<T> + ?Sized>(
    src: &S,
    inv: &Homography<T>,
    region: Region,
    offset: (T, T),
    sum: &mut [T],
    weight: &mut [T],
    min_mass: T,
) {
    if region.is_empty() {
        return;
    }
    let m = inv.matrix();
    let zero = T::zero();
    for y in region.y0..region.y1 {
        let gy = T::from_usize_lossy(y) + offset.1;
        let gx0 = T::from_usize_lossy(region.x0) + offset.0;
        // homogeneous coordinates are affine in x along a row
        let mut hx = m[0][0] * gx0 + m[0][1] * gy + m[0][2];
        let mut hy = m[1][0] * gx0 + m[1][1] * gy + m[1][2];
        let mut hw = m[2][0] * gx0 + m[2][1] * gy + m[2][2];
        let row = y * region.stride;
        for x in region.x0..region.x1 {
            if hw > zero {
                let (v, c) = sample_bilinear(src, hx / hw, hy / hw);
                if c >= min_mass && c > zero {
                    sum[row + x] = sum[row + x] + v;
                    weight[row + x] = weight[row + x] + c;
                }
            }
            hx = hx + m[0][0];
            hy = hy + m[1][0];
            hw = hw + m[2][0];
        }
    }
}

/// Integer bounding box `[x0, x1) x [y0, y1)` (in canvas pixels, after
/// subtracting `offset`) that can receive samples from a `width x height`
/// source warped by `w`. `None` if a corner maps behind the camera plane.
pub fn warped_footprint<T: Real>(
    w: &Homography<T>,
    width: usize,
    height: usize,
    offset: (T, T),
) -> Option<(isize, isize, isize, isize)> {
    let (wf, hf) = (T::from_usize_lossy(width), T::from_usize_lossy(height));
    let one = T::one();
    let corners = [(-one, -one), (wf, -one), (-one, hf), (wf, hf)];
    let mut lo = (T::infinity(), T::infinity());
    let mut hi = (T::neg_infinity(), T::neg_infinity());
    for (x, y) in corners {
        let (u, v) = w.try_map(x, y).ok()?;
        lo = (lo.0.min(u), lo.1.min(v));
        hi = (hi.0.max(u), hi.1.max(v));
    }
    let to_i = |v: T| v.to_isize();
    Some((
        to_i((lo.0 - offset.0).floor())?,
        to_i((lo.1 - offset.1).floor())?,
        to_i((hi.0 - offset.0).ceil())? + 1,
        to_i((hi.1 - offset.1).ceil())? + 1,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Homography<f64>, b: &Homography<f64>, tol: f64) -> bool {
        a.matrix()
            .iter()
            .flatten()
            .zip(b.matrix().iter().flatten())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    fn params_strategy(scale: f64) -> impl Strategy<Value = WarpParams<f64>> {
        prop::array::uniform8(-scale..scale).prop_map(|mut p| {
            // keep the projective row small so the matrices stay well conditioned
            p[6] *= 1e-2;
            p[7] *= 1e-2;
            WarpParams(p)
        })
    }

    #[test]
    fn zero_params_is_identity() {
        let h = Homography::from_params(&WarpParams::<f64>::zero()).unwrap();
        assert_eq!(h, Homography::identity());
    }

    #[test]
    fn translation_params() {
        let mut p = WarpParams::<f64>::zero();
        p.0[4] = 3.0;
        p.0[5] = -2.0;
        let h = Homography::from_params(&p).unwrap();
        assert_eq!(h, Homography::translation(3.0, -2.0));
        assert_eq!(h.map(1.0, 1.0), (4.0, -1.0));
    }

    #[test]
    fn projective_equivalence() {
        let h = Homography::from_matrix([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(h.to_params(), WarpParams::zero());
    }

    #[test]
    fn zero_normalizer_is_degenerate() {
        let r = Homography::from_matrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(matches!(r, Err(Error::Degeneracy(_))));
        let singular = WarpParams([-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(Homography::from_params(&singular).is_err());
    }

    #[test]
    fn translations_compose() {
        let a = Homography::translation(1.0, 0.0);
        let b = Homography::translation(2.0, 5.0);
        assert_eq!(a.compose(&b).unwrap(), Homography::translation(3.0, 5.0));
        assert_eq!(Homography::identity().compose(&b).unwrap(), b);
    }

    #[test]
    fn scale_warp_examples() {
        let id = Homography::<f64>::identity();
        assert_eq!(scale_warp(&id, 3.7), id);
        let t = Homography::translation(1.0, 0.0);
        assert_eq!(scale_warp(&t, 2.0), Homography::translation(2.0, 0.0));
    }

    #[test]
    fn identity_warp_copies_image() {
        let img = LinearImage::from_values(4, 3, (0..12).map(|v| v as f64).collect());
        let out = apply_warp(&img, &Homography::identity(), 4, 3, (0.0, 0.0)).unwrap();
        assert_eq!(out.values, img.values);
        assert!(out.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn half_pixel_shift_splits_impulse() {
        let mut v = vec![0.0; 5];
        v[2] = 1.0;
        let img = LinearImage::from_values(5, 1, v);
        let out = apply_warp(&img, &Homography::translation(0.5, 0.0), 5, 1, (0.0, 0.0)).unwrap();
        assert_eq!(out.values, vec![0.0, 0.0, 0.5, 0.5, 0.0]);
        assert_eq!(out.weights[0], 0.5);
        assert_eq!(out.weights[1], 1.0);
    }

    #[test]
    fn out_of_bounds_has_no_weight() {
        let img = LinearImage::constant(4, 4, 1.0f64);
        let out = apply_warp(&img, &Homography::translation(10.0, 0.0), 4, 4, (0.0, 0.0)).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
        assert!(out.weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn offset_shifts_output_window() {
        let img = LinearImage::from_values(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let out = apply_warp(&img, &Homography::identity(), 2, 1, (2.0, 0.0)).unwrap();
        assert_eq!(out.values, vec![3.0, 4.0]);
    }

    #[test]
    fn interior_accumulation_keeps_full_footprints() {
        fn covered<T: Real>() -> usize {
            let img = LinearImage::<T>::constant(20, 20, T::one());
            let inv = Homography::translation(T::lit(0.3), T::lit(-0.7));
            let mut sum = vec![T::zero(); 400];
            let mut weight = vec![T::zero(); 400];
            accumulate_warp_interior(&img, &inv, Region::full(20, 20), (T::zero(), T::zero()), &mut sum, &mut weight);
            weight.iter().filter(|&&c| c > T::zero()).count()
        }
        // x + 0.3 needs x <= 18, y - 0.7 needs y >= 1
        assert_eq!(covered::<f64>(), 19 * 19);
        assert_eq!(covered::<f32>(), 19 * 19);
    }

    #[test]
    fn warp_roundtrip_of_smooth_image_is_accurate() {
        let (w, h) = (96, 96);
        let vals: Vec<f64> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                0.5 + 0.2 * (x * 0.13).sin() * (y * 0.11).cos() + 0.1 * ((x + y) * 0.07).sin()
            })
            .collect();
        let img = LinearImage::from_values(w, h, vals);
        let hm = Homography::from_params(&WarpParams([0.01, -0.008, 0.012, -0.005, 2.3, -1.7, 1e-5, -2e-5])).unwrap();
        let fwd = apply_warp(&img, &hm, w, h, (0.0, 0.0)).unwrap();
        let fwd_img = LinearImage {
            width: w,
            height: h,
            values: fwd.values.clone(),
            weights: fwd.weights.iter().map(|&c| if c > 0.999 { 1.0 } else { 0.0 }).collect(),
            saturated: vec![false; w * h],
        };
        let back = apply_warp(&fwd_img, &hm.invert().unwrap(), w, h, (0.0, 0.0)).unwrap();
        let mut se = 0.0;
        let mut n = 0;
        for y in 10..h - 10 {
            for x in 10..w - 10 {
                let i = y * w + x;
                if back.weights[i] > 0.999 {
                    se += (back.values[i] - img.values[i]).powi(2);
                    n += 1;
                }
            }
        }
        let psnr = 10.0 * (1.0 / (se / n as f64)).log10();
        assert!(n > 4000);
        assert!(psnr > 40.0, "psnr {psnr}");
    }

    #[test]
    fn footprint_covers_translated_frame() {
        let fp = warped_footprint(&Homography::translation(10.5, 3.0), 8, 8, (0.0, 0.0)).unwrap();
        assert_eq!(fp, (9, 2, 20, 12));
    }

    proptest! {
        #[test]
        fn params_roundtrip(p in params_strategy(0.1)) {
            let h = Homography::from_params(&p).unwrap();
            let q = h.to_params();
            for (a, b) in p.0.iter().zip(q.0.iter()) {
                prop_assert!((a - b).abs() < 1e-15);
            }
            let h2 = Homography::from_params(&q).unwrap();
            prop_assert!(close(&h, &h2, 1e-12));
        }

        #[test]
        fn compose_with_inverse_is_identity(p in params_strategy(0.3)) {
            let h = Homography::from_params(&p).unwrap();
            let id = h.compose(&h.invert().unwrap()).unwrap();
            prop_assert!(close(&id, &Homography::identity(), 1e-10));
        }

        #[test]
        fn compose_is_associative(a in params_strategy(0.2), b in params_strategy(0.2), c in params_strategy(0.2)) {
            let (a, b, c) = (
                Homography::from_params(&a).unwrap(),
                Homography::from_params(&b).unwrap(),
                Homography::from_params(&c).unwrap(),
            );
            let l = a.compose(&b).unwrap().compose(&c).unwrap();
            let r = a.compose(&b.compose(&c).unwrap()).unwrap();
            prop_assert!(close(&l, &r, 1e-10));
        }

        #[test]
        fn scale_warp_is_homomorphism(a in params_strategy(0.2), b in params_strategy(0.2), s in 0.25f64..4.0) {
            let (a, b) = (Homography::from_params(&a).unwrap(), Homography::from_params(&b).unwrap());
            let l = scale_warp(&a.compose(&b).unwrap(), s);
            let r = scale_warp(&a, s).compose(&scale_warp(&b, s)).unwrap();
            prop_assert!(close(&l, &r, 1e-10));
            let back = scale_warp(&scale_warp(&a, 2.0), 0.5);
            prop_assert!(close(&back, &a, 1e-12));
        }

        #[test]
        fn scale_warp_matches_matrix_conjugation(a in params_strategy(0.2), s in 0.25f64..4.0) {
            let a = Homography::from_params(&a).unwrap();
            let viaconj = a.conjugate_similarity(s, 0.0, 0.0);
            prop_assert!(close(&scale_warp(&a, s), &viaconj, 1e-10));
        }

        #[test]
        fn conjugation_maps_points_consistently(a in params_strategy(0.2), s in 0.25f64..4.0, tx in -5.0f64..5.0, ty in -5.0f64..5.0, x in 0.0f64..50.0, y in 0.0f64..50.0) {
            let h = Homography::from_params(&a).unwrap();
            let c = h.conjugate_similarity(s, tx, ty);
            // c(M x) == M h(x)
            let (hx, hy) = h.map(x, y);
            let (cx, cy) = c.map(s * x + tx, s * y + ty);
            prop_assert!((cx - (s * hx + tx)).abs() < 1e-8);
            prop_assert!((cy - (s * hy + ty)).abs() < 1e-8);
        }

        #[test]
        fn warp_weight_bounded_by_input(a in params_strategy(0.2)) {
            let img = LinearImage::constant(20, 16, 1.0f64);
            let h = Homography::from_params(&a).unwrap();
            if let Ok(out) = apply_warp(&img, &h, 24, 24, (-2.0, -2.0)) {
                let total: f64 = out.weights.iter().sum();
                prop_assert!(total <= 20.0 * 16.0 * 1.5 + 1e-9);
                prop_assert!(out.weights.iter().all(|&w| (0.0..=1.0 + 1e-12).contains(&w)));
            }
        }
    }
}

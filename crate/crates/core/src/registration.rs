//! Pairwise homography estimation between merged images.
//!
//! The default backend is coarse-to-fine inverse-compositional gradient
//! alignment of the eight warp parameters on log intensities. Weights mask
//! out pixels without data, and pixels whose normalized weight falls below
//! `min_weight` in either image do not contribute.
//!
//! Warp convention: the result `A` satisfies `fixed(x) ≈ moving(A(x))`, i.e.
//! it maps fixed-image coordinates into moving-image coordinates.

use crate::error::{Error, Result};
use crate::image::LinearImage;
use crate::scalar::Real;
use crate::warp::{Homography, WarpParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationOptions {
    /// Pyramid depth; `None` picks `floor(log2(min_dim / 32)) + 1`.
    pub levels: Option<usize>,
    pub max_iterations: usize,
    /// Stop a level once the parameter update norm drops below this.
    pub tolerance: f64,
    /// Normalized weight below which a pixel is ignored.
    pub min_weight: f64,
    /// Diagonal loading as a fraction of `trace / 8` of the normal matrix.
    pub damping: f64,
    /// Consecutive residual increases at the finest level that count as
    /// divergence.
    pub divergence_patience: usize,
    /// Relative growth over the best residual below which an increase is
    /// not counted as divergence.
    pub divergence_slack: f64,
    /// Offset added before taking logs, as a fraction of the mean flux.
    pub log_offset: f64,
    /// Binomial smoothing passes applied to every pyramid level.
    pub smoothing_passes: usize,
    /// Weight residuals by their approximate inverse variance under shot
    /// noise instead of uniformly.
    pub noise_weighting: bool,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        Self {
            levels: None,
            max_iterations: 50,
            tolerance: 1e-6,
            min_weight: 0.5,
            damping: 1e-4,
            divergence_patience: 5,
            divergence_slack: 0.05,
            log_offset: 0.05,
            smoothing_passes: 1,
            noise_weighting: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationResult<T> {
    /// Maps fixed-image coordinates to moving-image coordinates.
    pub warp: WarpParams<T>,
    /// Mean squared log-intensity error over the final overlap.
    pub residual: T,
    pub converged: bool,
    pub iterations_used: usize,
}

/// A pairwise registration backend.
pub trait Registrar<T: Real>: Sync {
    fn register(
        &self,
        moving: &LinearImage<T>,
        fixed: &LinearImage<T>,
        init: &WarpParams<T>,
    ) -> Result<RegistrationResult<T>>;
}

/// Direct photometric alignment (the default backend).
#[derive(Debug, Clone, Default)]
pub struct DirectAligner {
    pub options: RegistrationOptions,
}

impl DirectAligner {
    pub fn new(options: RegistrationOptions) -> Self {
        Self { options }
    }
}

impl<T: Real> Registrar<T> for DirectAligner {
    fn register(
        &self,
        moving: &LinearImage<T>,
        fixed: &LinearImage<T>,
        init: &WarpParams<T>,
    ) -> Result<RegistrationResult<T>> {
        register(moving, fixed, init, &self.options)
    }
}

/// Wraps a backend and counts how many registrations it performed.
#[derive(Debug, Default)]
pub struct CountingRegistrar<R> {
    pub inner: R,
    calls: std::sync::atomic::AtomicUsize,
}

impl<R> CountingRegistrar<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            calls: Default::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, std::sync::atomic::Ordering::SeqCst);
    }
}

impl<T: Real, R: Registrar<T>> Registrar<T> for CountingRegistrar<R> {
    fn register(
        &self,
        moving: &LinearImage<T>,
        fixed: &LinearImage<T>,
        init: &WarpParams<T>,
    ) -> Result<RegistrationResult<T>> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.register(moving, fixed, init)
    }
}

/// Number of pyramid levels used when none is configured.
pub fn auto_levels(width: usize, height: usize) -> usize {
    let m = width.min(height) as f64 / 32.0;
    if m < 2.0 {
        1
    } else {
        m.log2().floor() as usize + 1
    }
}

/// RMS over the four image corners of the distance between where `a` and `b`
/// send them.
pub fn corner_displacement<T: Real>(
    a: &WarpParams<T>,
    b: &WarpParams<T>,
    width: usize,
    height: usize,
) -> Result<T> {
    let ha = Homography::from_params(a)?;
    let hb = Homography::from_params(b)?;
    Ok(corner_displacement_h(&ha, &hb, width, height))
}

pub fn corner_displacement_h<T: Real>(
    a: &Homography<T>,
    b: &Homography<T>,
    width: usize,
    height: usize,
) -> T {
    let (xm, ym) = (
        T::from_usize_lossy(width.max(1) - 1),
        T::from_usize_lossy(height.max(1) - 1),
    );
    let z = T::zero();
    let mut ss = z;
    for (x, y) in [(z, z), (xm, z), (z, ym), (xm, ym)] {
        let (ax, ay) = a.map(x, y);
        let (bx, by) = b.map(x, y);
        ss = ss + (ax - bx) * (ax - bx) + (ay - by) * (ay - by);
    }
    (ss / T::lit(4.0)).sqrt()
}

/// One pyramid level: log intensities with normalized weights in `[0, 1]`.
#[derive(Debug, Clone)]
struct Level<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
    weights: Vec<T>,
    /// Relative variance of each log value.
    var: Vec<T>,
}

impl<T: Real> Level<T> {
    fn from_image(img: &LinearImage<T>, offset: T) -> Self {
        let wmax = img.weights.iter().fold(T::zero(), |m, &w| m.max(w));
        let inv = if wmax > T::zero() { T::one() / wmax } else { T::zero() };
        let mut values = vec![T::zero(); img.len()];
        let mut weights = vec![T::zero(); img.len()];
        let mut var = vec![T::zero(); img.len()];
        for i in 0..img.len() {
            let w = img.weights[i];
            let v = img.values[i];
            if w > T::zero() && v.is_finite() {
                let lifted = v.max(T::zero()) + offset;
                values[i] = lifted.ln();
                weights[i] = w * inv;
                // shot noise: var(v) ~ v / w, so var(ln v) ~ 1 / (w v)
                var[i] = T::one() / (weights[i] * lifted / offset);
            }
        }
        Self {
            width: img.width,
            height: img.height,
            values,
            weights,
            var,
        }
    }

    /// 2x2 box downsample; coarse pixel `X` sits at fine `2X + 0.5`.
    ///
    /// Weights act only as a mask on values. Weighting the average itself
    /// would pull samples towards better covered neighbours and shift
    /// content inside the soft borders of merged images.
    fn downsample(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut values = vec![T::zero(); w * h];
        let mut weights = vec![T::zero(); w * h];
        let mut var = vec![T::zero(); w * h];
        let quarter = T::lit(0.25);
        for y in 0..h {
            for x in 0..w {
                let mut sv = T::zero();
                let mut sw = T::zero();
                let mut sq = T::zero();
                let mut complete = true;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let i = (2 * y + dy) * self.width + 2 * x + dx;
                    complete &= self.weights[i] > T::zero();
                    sv = sv + self.values[i];
                    sw = sw + self.weights[i];
                    sq = sq + self.var[i];
                }
                if complete {
                    let o = y * w + x;
                    values[o] = sv * quarter;
                    weights[o] = sw * quarter;
                    var[o] = sq * quarter * quarter;
                }
            }
        }
        Self {
            width: w,
            height: h,
            values,
            weights,
            var,
        }
    }

    /// [1 2 1] binomial smoothing in both directions, masked like
    /// [`Level::downsample`].
    fn smoothed(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let pass = |vals: &[T], wts: &[T], vars: &[T], horizontal: bool| {
            let mut ov = vec![T::zero(); w * h];
            let mut ow = vec![T::zero(); w * h];
            let mut oq = vec![T::zero(); w * h];
            let (two, quarter) = (T::lit(2.0), T::lit(0.25));
            for y in 0..h {
                for x in 0..w {
                    let mut sv = T::zero();
                    let mut sw = T::zero();
                    let mut sq = T::zero();
                    let mut complete = true;
                    for d in -1isize..=1 {
                        let (xx, yy) = if horizontal {
                            (x as isize + d, y as isize)
                        } else {
                            (x as isize, y as isize + d)
                        };
                        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                            complete = false;
                            break;
                        }
                        let k = if d == 0 { two } else { T::one() };
                        let i = yy as usize * w + xx as usize;
                        complete &= wts[i] > T::zero();
                        sv = sv + k * vals[i];
                        sw = sw + k * wts[i];
                        sq = sq + k * k * vars[i];
                    }
                    if complete {
                        let i = y * w + x;
                        ov[i] = sv * quarter;
                        ow[i] = sw * quarter;
                        oq[i] = sq * quarter * quarter;
                    }
                }
            }
            (ov, ow, oq)
        };
        let (v1, w1, q1) = pass(&self.values, &self.weights, &self.var, true);
        let (values, weights, var) = pass(&v1, &w1, &q1, false);
        Self {
            width: w,
            height: h,
            values,
            weights,
            var,
        }
    }
}

fn build_pyramid<T: Real>(base: Level<T>, levels: usize, passes: usize) -> Vec<Level<T>> {
    let mut raw = vec![base];
    while raw.len() < levels {
        let next = raw.last().unwrap().downsample();
        if next.width < 4 || next.height < 4 {
            break;
        }
        raw.push(next);
    }
    raw.into_iter()
        .map(|mut l| {
            for _ in 0..passes.max(1) {
                l = l.smoothed();
            }
            l
        })
        .collect()
}

/// Similarity taking finest-level pixel coordinates to level-`l` coordinates,
/// as `(scale, offset)`: `X_l = scale * x + offset`.
fn level_map<T: Real>(l: usize) -> (T, T) {
    let a = T::lit((1u64 << l) as f64);
    let b = (a - T::one()) / T::lit(2.0);
    (T::one() / a, -b / a)
}

/// Solves `a x = b` for a symmetric 8x8 system by Gaussian elimination with
/// partial pivoting.
fn solve8<T: Real>(mut a: [[T; 8]; 8], mut b: [T; 8]) -> Option<[T; 8]> {
    for c in 0..8 {
        let p = (c..8).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())?;
        if !(a[p][c].abs() > T::zero()) {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..8 {
            let f = a[r][c] / a[c][c];
            if f == T::zero() {
                continue;
            }
            for k in c..8 {
                a[r][k] = a[r][k] - f * a[c][k];
            }
            b[r] = b[r] - f * b[c];
        }
    }
    let mut x = [T::zero(); 8];
    for r in (0..8).rev() {
        let mut s = b[r];
        for k in r + 1..8 {
            s = s - a[r][k] * x[k];
        }
        x[r] = s / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Bilinear sample that is `None` unless every contributing tap has weight
/// at least `min_w`.
#[inline(always)]
fn sample_valid<T: Real>(img: &Level<T>, x: T, y: T, min_w: T) -> Option<(T, T)> {
    if !(x >= T::zero() && y >= T::zero()) {
        return None;
    }
    let (xf, yf) = (x.floor(), y.floor());
    let (x0, y0) = (xf.to_usize()?, yf.to_usize()?);
    let (fx, fy) = (x - xf, y - yf);
    let one = T::one();
    let taps = [
        (x0, y0, (one - fx) * (one - fy)),
        (x0 + 1, y0, fx * (one - fy)),
        (x0, y0 + 1, (one - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    let mut v = T::zero();
    let mut c = T::zero();
    let mut q = T::zero();
    for (tx, ty, k) in taps {
        if k == T::zero() {
            continue;
        }
        if tx >= img.width || ty >= img.height {
            return None;
        }
        let i = ty * img.width + tx;
        let w = img.weights[i];
        if w < min_w {
            return None;
        }
        v = v + k * img.values[i];
        c = c + k;
        q = q + k * k * img.var[i];
    }
    (c > T::zero()).then(|| (v / c, q / (c * c)))
}

struct LevelOutcome<T> {
    warp: Homography<T>,
    residual: T,
    iterations: usize,
    ok: bool,
}

/// Template data precomputed for one level.
struct Template<T> {
    idx: Vec<usize>,
    sd: Vec<[T; 8]>,
}

fn template<T: Real>(fixed: &Level<T>, min_w: T, center: (T, T), scale: T) -> Template<T> {
    let (w, h) = (fixed.width, fixed.height);
    let mut idx = Vec::new();
    let mut sd = Vec::new();
    let half = T::lit(0.5);
    let valid = |i: usize| fixed.weights[i] >= min_w;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            if !(valid(i) && valid(i - 1) && valid(i + 1) && valid(i - w) && valid(i + w)) {
                continue;
            }
            // gradients with respect to normalized coordinates
            let gx = (fixed.values[i + 1] - fixed.values[i - 1]) * half * scale;
            let gy = (fixed.values[i + w] - fixed.values[i - w]) * half * scale;
            let u = (T::from_usize_lossy(x) - center.0) / scale;
            let v = (T::from_usize_lossy(y) - center.1) / scale;
            let r = gx * u + gy * v;
            idx.push(i);
            sd.push([gx * u, gy * u, gx * v, gy * v, gx, gy, -u * r, -v * r]);
        }
    }
    Template { idx, sd }
}

/// Parameters estimated in one pass. Coarse levels see few pixels, so they
/// only fit the better conditioned low-order models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Model {
    Translation,
    Affine,
    Homography,
}

impl Model {
    fn active(self, param: usize) -> bool {
        match self {
            Model::Translation => param == 4 || param == 5,
            Model::Affine => param < 6,
            Model::Homography => true,
        }
    }
}

fn align_level<T: Real>(
    moving: &Level<T>,
    fixed: &Level<T>,
    start: Homography<T>,
    opts: &RegistrationOptions,
    model: Model,
    finest: bool,
) -> Result<LevelOutcome<T>> {
    let min_w = T::lit(opts.min_weight);
    let center = (
        T::from_usize_lossy(fixed.width - 1) / T::lit(2.0),
        T::from_usize_lossy(fixed.height - 1) / T::lit(2.0),
    );
    let scale = T::from_usize_lossy(fixed.width.max(fixed.height)) / T::lit(2.0);
    let tpl = template(fixed, min_w, center, scale);
    let min_count = (tpl.idx.len() / 10).max(16);
    if tpl.idx.len() < 16 {
        return Ok(LevelOutcome {
            warp: start,
            residual: T::zero(),
            iterations: 0,
            ok: false,
        });
    }
    // pixel <-> normalized coordinates: u = (X - c) / s
    let to_norm = |h: &Homography<T>| {
        h.conjugate_similarity(T::one() / scale, -center.0 / scale, -center.1 / scale)
    };
    let to_pix = |h: &Homography<T>| h.conjugate_similarity(scale, center.0, center.1);

    let mut warp = start;
    let mut residual = T::infinity();
    let mut increases = 0;
    let mut best = T::infinity();
    let divergence_slack = T::lit(1.0 + opts.divergence_slack);
    let mut iterations = 0;
    let tol = T::lit(opts.tolerance);
    let w = fixed.width;
    for _ in 0..opts.max_iterations {
        iterations += 1;
        let mut hess = [[T::zero(); 8]; 8];
        let mut rhs = [T::zero(); 8];
        let mut sse = T::zero();
        let mut count = 0usize;
        for (k, &i) in tpl.idx.iter().enumerate() {
            let (x, y) = (T::from_usize_lossy(i % w), T::from_usize_lossy(i / w));
            let (mx, my) = warp.map(x, y);
            let Some((v, q)) = sample_valid(moving, mx, my, min_w) else {
                continue;
            };
            let e = v - fixed.values[i];
            let sd = &tpl.sd[k];
            let pw = if opts.noise_weighting {
                T::one() / (q + fixed.var[i])
            } else {
                T::one()
            };
            for r in 0..8 {
                let ws = pw * sd[r];
                rhs[r] = rhs[r] + ws * e;
                for cc in r..8 {
                    hess[r][cc] = hess[r][cc] + ws * sd[cc];
                }
            }
            sse = sse + e * e;
            count += 1;
        }
        if count < min_count {
            return Ok(LevelOutcome {
                warp,
                residual,
                iterations,
                ok: false,
            });
        }
        let new_residual = sse / T::from_usize_lossy(count);
        // Near its fixed point the inverse-compositional update can nudge the
        // forward residual up by a fraction of a percent; only growth beyond
        // the best value seen plus slack counts towards divergence.
        best = best.min(new_residual);
        if finest && new_residual > residual && new_residual > best * divergence_slack {
            increases += 1;
            if increases >= opts.divergence_patience {
                return Ok(LevelOutcome {
                    warp,
                    residual: new_residual,
                    iterations,
                    ok: false,
                });
            }
        } else {
            increases = 0;
        }
        residual = new_residual;
        for r in 0..8 {
            for cc in 0..r {
                hess[r][cc] = hess[cc][r];
            }
        }
        let active = (0..8).filter(|&r| model.active(r)).count();
        let trace = (0..8).filter(|&r| model.active(r)).map(|r| hess[r][r]).sum::<T>();
        let lambda = T::lit(opts.damping) * trace / T::from_usize_lossy(active);
        for r in 0..8 {
            if model.active(r) {
                hess[r][r] = hess[r][r] + lambda;
            } else {
                for c in 0..8 {
                    hess[r][c] = T::zero();
                    hess[c][r] = T::zero();
                }
                hess[r][r] = T::one();
                rhs[r] = T::zero();
            }
        }
        let Some(delta) = solve8(hess, rhs) else {
            return Ok(LevelOutcome {
                warp,
                residual,
                iterations,
                ok: false,
            });
        };
        let delta = WarpParams(delta);
        let step = match Homography::from_params(&delta).and_then(|d| d.invert()) {
            Ok(s) => s,
            Err(_) => {
                return Ok(LevelOutcome {
                    warp,
                    residual,
                    iterations,
                    ok: false,
                })
            }
        };
        let updated = to_norm(&warp).compose(&step).map(|h| to_pix(&h));
        warp = match updated {
            Ok(h) => h,
            Err(_) => {
                return Ok(LevelOutcome {
                    warp,
                    residual,
                    iterations,
                    ok: false,
                })
            }
        };
        if delta.norm() < tol {
            break;
        }
    }
    Ok(LevelOutcome {
        warp,
        residual,
        iterations,
        ok: true,
    })
}

/// Aligns `moving` to `fixed` starting from `init`.
pub fn register<T: Real>(
    moving: &LinearImage<T>,
    fixed: &LinearImage<T>,
    init: &WarpParams<T>,
    opts: &RegistrationOptions,
) -> Result<RegistrationResult<T>> {
    if moving.width != fixed.width || moving.height != fixed.height {
        return Err(Error::arg(format!(
            "image sizes differ: {}x{} vs {}x{}",
            moving.width, moving.height, fixed.width, fixed.height
        )));
    }
    for (name, img) in [("moving", moving), ("fixed", fixed)] {
        if img.coverage() <= 0.5 {
            return Err(Error::Overlap(format!(
                "{name} image has data in only {:.1}% of pixels",
                100.0 * img.coverage()
            )));
        }
    }
    let start = Homography::from_params(init)?;

    // A common offset for both images keeps the log transform identical.
    let (sum, n) = [moving, fixed]
        .iter()
        .flat_map(|img| (0..img.len()).filter(|&i| img.has_data(i)).map(|i| img.values[i]))
        .fold((T::zero(), 0usize), |(s, n), v| (s + v.max(T::zero()), n + 1));
    let mean = if n > 0 { sum / T::from_usize_lossy(n) } else { T::zero() };
    let offset = if mean > T::zero() { T::lit(opts.log_offset) * mean } else { T::one() };

    let levels = opts
        .levels
        .unwrap_or_else(|| auto_levels(fixed.width, fixed.height))
        .max(1);
    let mov_pyr = build_pyramid(Level::from_image(moving, offset), levels, opts.smoothing_passes);
    let fix_pyr = build_pyramid(Level::from_image(fixed, offset), levels, opts.smoothing_passes);
    let levels = mov_pyr.len().min(fix_pyr.len());

    let mut warp = start;
    let mut outcome = None;
    for l in (0..levels).rev() {
        let (s, o) = level_map::<T>(l);
        let at_level = warp.conjugate_similarity(s, o, o);
        let models: &[Model] = match (l == levels - 1, l == 0) {
            (true, true) => &[Model::Translation, Model::Affine, Model::Homography],
            (true, false) => &[Model::Translation, Model::Affine],
            (false, false) => &[Model::Affine],
            (false, true) => &[Model::Homography],
        };
        let mut at_level = at_level;
        for &model in models {
            let finest = l == 0 && model == Model::Homography;
            let res = align_level(&mov_pyr[l], &fix_pyr[l], at_level, opts, model, finest)?;
            at_level = res.warp;
            let failed = !res.ok;
            outcome = Some(res);
            if failed {
                break;
            }
        }
        let (si, oi) = (T::one() / s, -o / s);
        warp = at_level.conjugate_similarity(si, oi, oi);
        if outcome.as_ref().is_some_and(|r| !r.ok) {
            break;
        }
    }
    let res = outcome.expect("at least one level");
    let params = warp.to_params();
    let sane = params.is_finite()
        && corner_displacement_h(&warp, &start, fixed.width, fixed.height).as_f64()
            < 0.5 * fixed.width.min(fixed.height) as f64;
    Ok(RegistrationResult {
        warp: params,
        residual: if res.residual.is_finite() { res.residual } else { T::zero() },
        converged: res.ok && sane,
        iterations_used: res.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::apply_warp;

    /// Smooth band-limited texture with features at several scales.
    pub(crate) fn texture(width: usize, height: usize, seed: u64) -> LinearImage<f64> {
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
                0.5 + 0.45 * s / norm * 2.0
            })
            .map(|v: f64| v.clamp(0.02, 1.0))
            .collect();
        LinearImage::from_values(width, height, vals)
    }

    fn as_image(w: crate::warp::WarpedImage<f64>) -> LinearImage<f64> {
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

    #[test]
    fn auto_level_count() {
        assert_eq!(auto_levels(128, 128), 3);
        assert_eq!(auto_levels(256, 200), 3);
        assert_eq!(auto_levels(256, 256), 4);
        assert_eq!(auto_levels(40, 40), 1);
    }

    #[test]
    fn corner_displacement_examples() {
        let z = WarpParams::<f64>::zero();
        assert_eq!(corner_displacement(&z, &z, 64, 48).unwrap(), 0.0);
        let t = WarpParams::translation(3.0, 4.0);
        assert!((corner_displacement(&z, &t, 64, 48).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn corner_displacement_matches_direct_evaluation() {
        let a = WarpParams([0.01, -0.02, 0.015, 0.005, 2.0, -1.0, 1e-4, -5e-5]);
        let b = WarpParams([-0.01, 0.01, 0.0, 0.02, -1.0, 0.5, -1e-4, 2e-5]);
        let (w, h) = (100.0, 80.0);
        let apply = |p: &WarpParams<f64>, x: f64, y: f64| {
            let q = p.0;
            let d = q[6] * x + q[7] * y + 1.0;
            (((1.0 + q[0]) * x + q[2] * y + q[4]) / d, (q[1] * x + (1.0 + q[3]) * y + q[5]) / d)
        };
        let mut ss = 0.0;
        for (x, y) in [(0.0, 0.0), (w - 1.0, 0.0), (0.0, h - 1.0), (w - 1.0, h - 1.0)] {
            let (ax, ay) = apply(&a, x, y);
            let (bx, by) = apply(&b, x, y);
            ss += (ax - bx).powi(2) + (ay - by).powi(2);
        }
        let expected = (ss / 4.0).sqrt();
        assert!((corner_displacement(&a, &b, 100, 80).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn self_registration_is_identity() {
        let img = texture(128, 128, 3);
        let r = register(&img, &img, &WarpParams::zero(), &RegistrationOptions::default()).unwrap();
        assert!(r.converged);
        assert!(corner_displacement(&r.warp, &WarpParams::zero(), 128, 128).unwrap() < 0.05);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn recovers_translation() {
        let fixed = texture(128, 128, 5);
        let truth = Homography::translation(3.0, -2.0);
        let moving = as_image(apply_warp(&fixed, &truth, 128, 128, (0.0, 0.0)).unwrap());
        let r = register(&moving, &fixed, &WarpParams::zero(), &RegistrationOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.warp.0[4] - 3.0).abs() < 0.1, "{:?}", r.warp);
        assert!((r.warp.0[5] + 2.0).abs() < 0.1, "{:?}", r.warp);
        let err = corner_displacement(&r.warp, &truth.to_params(), 128, 128).unwrap();
        assert!(err < 0.25, "corner error {err}");
    }

    #[test]
    fn single_precision_backend() {
        let fixed = texture(96, 96, 8).cast::<f32>();
        let truth = Homography::<f32>::translation(1.5, 2.25);
        let w = apply_warp(&fixed, &truth, 96, 96, (0.0, 0.0)).unwrap();
        let moving = LinearImage {
            width: 96,
            height: 96,
            saturated: vec![false; w.values.len()],
            values: w.values.iter().zip(&w.weights).map(|(v, c)| if *c > 0.0 { v / c } else { 0.0 }).collect(),
            weights: w.weights,
        };
        let r = register(&moving, &fixed, &WarpParams::zero(), &RegistrationOptions::default()).unwrap();
        let err = corner_displacement(&r.warp, &truth.to_params(), 96, 96).unwrap();
        assert!(err < 0.25, "corner error {err}");
    }

    #[test]
    fn rejects_sparse_images() {
        let mut img = texture(64, 64, 1);
        for w in img.weights.iter_mut().take(64 * 40) {
            *w = 0.0;
        }
        let full = texture(64, 64, 1);
        let r = register(&img, &full, &WarpParams::zero(), &RegistrationOptions::default());
        assert!(matches!(r, Err(Error::Overlap(_))));
        let r = register(&full, &texture(32, 64, 1), &WarpParams::zero(), &RegistrationOptions::default());
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn flat_images_do_not_converge() {
        let flat = LinearImage::constant(64, 64, 0.5f64);
        let r = register(&flat, &flat, &WarpParams::zero(), &RegistrationOptions::default()).unwrap();
        assert!(!r.converged);
    }
}

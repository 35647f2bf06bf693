//! Accuracy metrics and their flat-text serialization.

use std::fmt::Write as _;

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::image::LinearImage;
use crate::registration::corner_displacement_h;
use crate::warp::{sample_bilinear, Homography};
use crate::scalar::Real;
use crate::trajectory::Trajectory;

/// Summary of one reconstruction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub corner_rmse_px: Option<f64>,
    pub psnr_db: Option<f64>,
    pub coverage_fraction: f64,
    pub registrations_per_iteration: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
}

impl Metrics {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |v| format!("{v:?}"));
        let _ = writeln!(s, "corner_rmse_px = {}", opt(self.corner_rmse_px));
        let _ = writeln!(s, "psnr_db = {}", opt(self.psnr_db));
        let _ = writeln!(s, "coverage_fraction = {:?}", self.coverage_fraction);
        let counts: Vec<String> = self.registrations_per_iteration.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "registrations_per_iteration = {}", counts.join(","));
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "wall_time_s = {:?}", self.wall_time_s);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = FlatConfig::parse(text)?;
        let mut opt = |key: &str| -> Result<Option<f64>> {
            match kv.take(key) {
                None => Ok(None),
                Some((_, v)) if v == "none" => Ok(None),
                Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Config {
                    line,
                    msg: format!("invalid `{key}`: {e}"),
                }),
            }
        };
        let corner_rmse_px = opt("corner_rmse_px")?;
        let psnr_db = opt("psnr_db")?;
        let coverage_fraction = opt("coverage_fraction")?.unwrap_or(0.0);
        let wall_time_s = opt("wall_time_s")?.unwrap_or(0.0);
        let registrations_per_iteration = match kv.take("registrations_per_iteration") {
            None => Vec::new(),
            Some((line, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(|c| {
                    c.parse().map_err(|e| Error::Config {
                        line,
                        msg: format!("invalid registration count `{c}`: {e}"),
                    })
                })
                .collect::<Result<_>>()?,
        };
        let iterations = kv.take_parsed("iterations")?.unwrap_or(0);
        let converged = kv.take_parsed("converged")?.unwrap_or(false);
        kv.finish()?;
        Ok(Self {
            corner_rmse_px,
            psnr_db,
            coverage_fraction,
            registrations_per_iteration,
            iterations,
            converged,
            wall_time_s,
        })
    }
}

/// Corner RMSE between two trajectories.
///
/// Both are re-anchored to the identity at the first common time, which
/// removes the unobservable global warp. The per-time corner displacement is
/// then pooled (root mean square) over the knot times of either trajectory
/// inside the common range, excluding the anchor itself where both agree by
/// construction. Errors if the time ranges do not overlap.
pub fn trajectory_rmse<T: Real>(
    estimate: &Trajectory<T>,
    truth: &Trajectory<T>,
    width: usize,
    height: usize,
) -> Result<T> {
    let t0 = estimate.first_time().max(truth.first_time());
    let t1 = estimate.last_time().min(truth.last_time());
    if t0 > t1 {
        return Err(Error::Evaluation(format!(
            "time ranges [{}, {}] and [{}, {}] do not overlap",
            estimate.first_time(),
            estimate.last_time(),
            truth.first_time(),
            truth.last_time()
        )));
    }
    let mut times: Vec<T> = truth
        .knots()
        .iter()
        .chain(estimate.knots())
        .map(|k| k.t)
        .filter(|&t| t > t0 && t <= t1)
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    if times.is_empty() {
        return Ok(T::zero());
    }
    rmse_at(estimate, truth, t0, &times, width, height)
}

/// Corner RMSE over `times` after re-anchoring both trajectories at `anchor`.
pub fn rmse_at<T: Real>(
    estimate: &Trajectory<T>,
    truth: &Trajectory<T>,
    anchor: T,
    times: &[T],
    width: usize,
    height: usize,
) -> Result<T> {
    if times.is_empty() {
        return Err(Error::Evaluation("no evaluation times".into()));
    }
    let ea = estimate.homography_at(anchor)?.invert()?;
    let ta = truth.homography_at(anchor)?.invert()?;
    let mut ss = T::zero();
    for &t in times {
        let e = ea.compose(&estimate.homography_at(t)?)?;
        let g = ta.compose(&truth.homography_at(t)?)?;
        let d = corner_displacement_h(&e, &g, width, height);
        ss = ss + d * d;
    }
    Ok((ss / T::from_usize_lossy(times.len())).sqrt())
}

/// Per-time corner displacements after re-anchoring, for diagnostics.
pub fn corner_errors<T: Real>(
    estimate: &Trajectory<T>,
    truth: &Trajectory<T>,
    anchor: T,
    times: &[T],
    width: usize,
    height: usize,
) -> Result<Vec<T>> {
    times
        .iter()
        .map(|&t| rmse_at(estimate, truth, anchor, &[t], width, height))
        .collect()
}

/// Map from the estimate's global frame to scene pixels, matched at time `t`.
///
/// Independent of the estimate's gauge: any global warp applied to the
/// estimate cancels.
pub fn scene_from_global(estimate: &Trajectory<f64>, truth: &Trajectory<f64>, t: f64) -> Result<Homography<f64>> {
    truth.homography_at(t)?.compose(&estimate.homography_at(t)?.invert()?)
}

/// Ground-truth flux on a canvas grid.
///
/// Canvas pixel `X` sits at global coordinates `(X + origin) / scale`, and
/// `to_scene` takes global coordinates to scene pixels. Scene values are
/// multiplied by `flux_scale`. Pixels whose sample leaves the scene carry no
/// data.
pub fn reference_on_canvas(
    scene: &LinearImage<f64>,
    flux_scale: f64,
    to_scene: &Homography<f64>,
    width: usize,
    height: usize,
    origin: (f64, f64),
    scale: f64,
) -> LinearImage<f64> {
    let mut out = LinearImage::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let gx = (x as f64 + origin.0) / scale;
            let gy = (y as f64 + origin.1) / scale;
            let Ok((u, v)) = to_scene.try_map(gx, gy) else {
                continue;
            };
            let (val, c) = sample_bilinear(scene, u, v);
            if c > 1.0 - 1e-9 {
                let i = y * width + x;
                out.values[i] = val / c * flux_scale;
                out.weights[i] = 1.0;
            }
        }
    }
    out
}

/// PSNR in dB of `estimate` against `truth` over pixels where both have
/// data, for signals whose peak is `peak`.
pub fn psnr<T: Real>(estimate: &LinearImage<T>, truth: &LinearImage<T>, peak: f64) -> Result<f64> {
    if (estimate.width, estimate.height) != (truth.width, truth.height) {
        return Err(Error::Evaluation("image sizes differ".into()));
    }
    let mut ss = 0.0;
    let mut n = 0usize;
    for i in 0..estimate.len() {
        if estimate.has_data(i) && truth.has_data(i) {
            let d = estimate.values[i].as_f64() - truth.values[i].as_f64();
            ss += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Evaluation("images share no valid pixels".into()));
    }
    let mse = ss / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() })
}

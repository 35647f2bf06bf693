//! Panorama assembly from every binary frame and output writers.
//!
//! Canvas pixel `X` sits at global coordinates `X + origin`, where global
//! coordinates are the trajectory's target frame scaled by `scale`. Frame `t`
//! lands on the canvas through `S * W(t)`, `S` being the pure scaling by
//! `scale`.

use std::io::{Read, Write};
use std::path::Path;

use image::{GrayImage, ImageBuffer, ImageFormat, Luma};
use rayon::prelude::*;

use crate::cube::PhotonCube;
use crate::error::{Error, Result};
use crate::image::{flux_from_fraction, FractionImage, LinearImage};
use crate::scalar::Real;
use crate::tone::flux_percentile;
use crate::trajectory::Trajectory;
use crate::warp::{accumulate_warp, scale_warp, warped_footprint, Homography, Region};

const PADDING: isize = 2;
const BAND_ROWS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    /// Super-resolution factor.
    pub scale: f64,
    /// Use every `frame_stride`-th frame.
    pub frame_stride: usize,
    /// Pixels with less accumulated weight are left without data.
    pub weight_min: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            frame_stride: 1,
            weight_min: 8.0,
        }
    }
}

/// Accumulated warped binary samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaCanvas<T> {
    pub width: usize,
    pub height: usize,
    /// Global coordinates of canvas pixel `(0, 0)`.
    pub origin: (T, T),
    pub sum: Vec<T>,
    pub weight: Vec<T>,
    pub scale: T,
}

/// Canvas size and origin covering the field of view along `traj`.
///
/// The scaled field-of-view corners are pushed through `scale_warp(W(t), s)`
/// at every knot and every 100th frame; the bounding box is padded by 2 px.
pub fn canvas_bounds<T: Real>(
    traj: &Trajectory<T>,
    fov_width: usize,
    fov_height: usize,
    scale: T,
    n: usize,
) -> Result<(usize, usize, (T, T))> {
    if !(scale > T::zero()) {
        return Err(Error::arg("render scale must be positive"));
    }
    let last = T::from_usize_lossy(n.max(1) - 1);
    let mut times: Vec<T> = (0..n).step_by(100).map(T::from_usize_lossy).collect();
    times.push(last);
    times.extend(traj.knots().iter().map(|k| k.t).filter(|&t| t >= T::zero() && t <= last));
    let xm = T::from_usize_lossy(fov_width) * scale - T::one();
    let ym = T::from_usize_lossy(fov_height) * scale - T::one();
    let z = T::zero();
    let mut lo = (T::infinity(), T::infinity());
    let mut hi = (T::neg_infinity(), T::neg_infinity());
    for t in times {
        let w = scale_warp(&traj.homography_at(t)?, scale);
        for (x, y) in [(z, z), (xm, z), (z, ym), (xm, ym)] {
            let (u, v) = w.try_map(x, y)?;
            lo = (lo.0.min(u), lo.1.min(v));
            hi = (hi.0.max(u), hi.1.max(v));
        }
    }
    let to_i = |v: T| {
        v.to_isize()
            .ok_or_else(|| Error::degenerate(format!("canvas bound {v} out of range")))
    };
    let (x0, y0) = (to_i(lo.0.floor())?, to_i(lo.1.floor())?);
    let (x1, y1) = (to_i(hi.0.ceil())?, to_i(hi.1.ceil())?);
    let width = (x1 - x0 + 1 + 2 * PADDING) as usize;
    let height = (y1 - y0 + 1 + 2 * PADDING) as usize;
    const MAX_PIXELS: usize = 1 << 30;
    if width.saturating_mul(height) > MAX_PIXELS {
        return Err(Error::degenerate(format!("canvas of {width}x{height} pixels is unreasonably large")));
    }
    Ok((
        width,
        height,
        (T::lit((x0 - PADDING) as f64), T::lit((y0 - PADDING) as f64)),
    ))
}

impl<T: Real> PanoramaCanvas<T> {
    pub fn new(width: usize, height: usize, origin: (T, T), scale: T) -> Self {
        Self {
            width,
            height,
            origin,
            sum: vec![T::zero(); width * height],
            weight: vec![T::zero(); width * height],
            scale,
        }
    }

    /// Empty canvas sized by [`canvas_bounds`].
    pub fn for_trajectory(traj: &Trajectory<T>, cube: &PhotonCube, scale: T) -> Result<Self> {
        let (w, h, origin) = canvas_bounds(traj, cube.width(), cube.height(), scale, cube.num_frames())?;
        Ok(Self::new(w, h, origin, scale))
    }

    /// Canvas-to-frame warps and canvas footprints for `frames`.
    fn placements(
        &self,
        cube: &PhotonCube,
        traj: &Trajectory<T>,
        frames: &[usize],
    ) -> Result<Vec<(usize, Homography<T>, (isize, isize, isize, isize))>> {
        let s = Homography::from_matrix({
            let z = T::zero();
            [[self.scale, z, z], [z, self.scale, z], [z, z, T::one()]]
        })?;
        let mut out = Vec::with_capacity(frames.len());
        for &i in frames {
            if i >= cube.num_frames() {
                return Err(Error::arg(format!("frame {i} out of range")));
            }
            let fwd = s.compose(&traj.homography_at(T::from_usize_lossy(i))?)?;
            let fp = warped_footprint(&fwd, cube.width(), cube.height(), self.origin)
                .ok_or_else(|| Error::degenerate(format!("frame {i} maps behind the camera")))?;
            out.push((i, fwd.invert()?, fp));
        }
        Ok(out)
    }

    /// Adds `frames` (in the given order) to the canvas.
    ///
    /// Work is split into horizontal bands; each band sums frames in order,
    /// so the result does not depend on the number of workers.
    pub fn accumulate(&mut self, cube: &PhotonCube, traj: &Trajectory<T>, frames: &[usize]) -> Result<()> {
        let placements = self.placements(cube, traj, frames)?;
        let (w, h) = (self.width, self.height);
        let origin = self.origin;
        self.sum
            .par_chunks_mut(BAND_ROWS * w)
            .zip(self.weight.par_chunks_mut(BAND_ROWS * w))
            .enumerate()
            .for_each(|(b, (sum, weight))| {
                let b0 = (b * BAND_ROWS) as isize;
                let rows = (sum.len() / w) as isize;
                for (i, inv, (fx0, fy0, fx1, fy1)) in &placements {
                    let y0 = (fy0 - b0).max(0);
                    let y1 = (fy1 - b0).min(rows);
                    let x0 = (*fx0).max(0);
                    let x1 = (*fx1).min(w as isize);
                    if y0 >= y1 || x0 >= x1 {
                        continue;
                    }
                    let region = Region {
                        x0: x0 as usize,
                        y0: y0 as usize,
                        x1: x1 as usize,
                        y1: y1 as usize,
                        stride: w,
                    };
                    let offset = (origin.0, origin.1 + T::lit(b0 as f64));
                    accumulate_warp(&cube.frame(*i), inv, region, offset, sum, weight);
                }
            });
        debug_assert_eq!(self.sum.len(), w * h);
        Ok(())
    }

    /// Adds an already averaged image of `samples` frames, placed on the
    /// canvas by `warp` (image coordinates to unscaled global coordinates).
    pub fn accumulate_image(&mut self, img: &FractionImage<T>, warp: &Homography<T>, samples: T) -> Result<()> {
        let z = T::zero();
        let s = Homography::from_matrix([[self.scale, z, z], [z, self.scale, z], [z, z, T::one()]])?;
        let fwd = s.compose(warp)?;
        let (fx0, fy0, fx1, fy1) = warped_footprint(&fwd, img.width, img.height, self.origin)
            .ok_or_else(|| Error::degenerate("image maps behind the camera"))?;
        let (w, h) = (self.width as isize, self.height as isize);
        let (x0, y0, x1, y1) = (fx0.max(0), fy0.max(0), fx1.min(w), fy1.min(h));
        if x0 >= x1 || y0 >= y1 {
            return Ok(());
        }
        let rows = (y1 - y0) as usize;
        let mut sum = vec![z; rows * self.width];
        let mut weight = vec![z; rows * self.width];
        let region = Region {
            x0: x0 as usize,
            y0: 0,
            x1: x1 as usize,
            y1: rows,
            stride: self.width,
        };
        let offset = (self.origin.0, self.origin.1 + T::lit(y0 as f64));
        accumulate_warp(img, &fwd.invert()?, region, offset, &mut sum, &mut weight);
        let base = y0 as usize * self.width;
        for i in 0..sum.len() {
            self.sum[base + i] = self.sum[base + i] + samples * sum[i];
            self.weight[base + i] = self.weight[base + i] + samples * weight[i];
        }
        Ok(())
    }

    /// Adds another canvas with identical geometry.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height)
            || self.origin != other.origin
            || self.scale != other.scale
        {
            return Err(Error::arg("canvas geometry differs"));
        }
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a = *a + *b;
        }
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a = *a + *b;
        }
        Ok(())
    }

    pub fn total_weight(&self) -> T {
        self.weight.iter().copied().sum()
    }

    /// Flux per pixel from the pooled detection fraction; pixels with less
    /// than `weight_min` weight carry no data.
    pub fn flux(&self, tau: f64, weight_min: f64) -> Result<LinearImage<T>> {
        let tau = T::lit(tau);
        let wmin = T::lit(weight_min).max(T::min_positive_value());
        let mut img = LinearImage::zeros(self.width, self.height);
        let mut any = false;
        for i in 0..self.sum.len() {
            let c = self.weight[i];
            if c >= wmin {
                let fraction = (self.sum[i] / c).min(T::one()).max(T::zero());
                let (f, sat) = flux_from_fraction(fraction, tau, c);
                img.values[i] = f;
                img.saturated[i] = sat;
                img.weights[i] = c;
                any = true;
            }
        }
        if !any {
            return Err(Error::Render(format!(
                "no canvas pixel reached the minimum weight of {weight_min}"
            )));
        }
        Ok(img)
    }
}

/// Warps every (strided) frame onto a fresh canvas.
pub fn assemble<T: Real>(cube: &PhotonCube, traj: &Trajectory<T>, cfg: &RenderConfig) -> Result<PanoramaCanvas<T>> {
    let mut canvas = PanoramaCanvas::for_trajectory(traj, cube, T::lit(cfg.scale))?;
    let frames: Vec<usize> = (0..cube.num_frames()).step_by(cfg.frame_stride.max(1)).collect();
    canvas.accumulate(cube, traj, &frames)?;
    if canvas.total_weight() <= T::zero() {
        return Err(Error::Render("no frame overlaps the canvas".into()));
    }
    Ok(canvas)
}

/// Baseline without motion compensation inside groups: every run of
/// `group_size` consecutive frames is averaged in place and the average is
/// placed with the warp of its centre frame.
pub fn assemble_uncompensated<T: Real>(
    cube: &PhotonCube,
    traj: &Trajectory<T>,
    group_size: usize,
    cfg: &RenderConfig,
) -> Result<PanoramaCanvas<T>> {
    let n = cube.num_frames();
    if group_size == 0 || group_size > n {
        return Err(Error::arg(format!("group size {group_size} outside 1..={n}")));
    }
    let mut canvas = PanoramaCanvas::for_trajectory(traj, cube, T::lit(cfg.scale))?;
    for g in 0..n / group_size {
        let start = g * group_size;
        let idx: Vec<usize> = (start..start + group_size).collect();
        let mean = cube.mean_frame::<T>(&idx)?;
        let warp = traj.homography_at(T::from_usize_lossy(start + group_size / 2))?;
        canvas.accumulate_image(&mean, &warp, T::from_usize_lossy(group_size))?;
    }
    if canvas.total_weight() <= T::zero() {
        return Err(Error::Render("no group overlaps the canvas".into()));
    }
    Ok(canvas)
}

/// Assembles and converts to flux in one step.
pub fn render_flux<T: Real>(cube: &PhotonCube, traj: &Trajectory<T>, cfg: &RenderConfig) -> Result<LinearImage<T>> {
    assemble(cube, traj, cfg)?.flux(cube.tau(), cfg.weight_min)
}

/// Writes an 8-bit grayscale raster; PGM or PNG by extension.
pub fn write_gray(path: impl AsRef<Path>, width: usize, height: usize, codes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(width as u32, height as u32, codes.to_vec())
        .ok_or_else(|| Error::arg("raster size mismatch"))?;
    img.save_with_format(path, ImageFormat::from_path(path)?)?;
    Ok(())
}

/// 16-bit PNG with flux scaled linearly so the 99.9th percentile is white.
pub fn write_png16<T: Real>(path: impl AsRef<Path>, img: &LinearImage<T>) -> Result<()> {
    let white = flux_percentile(img, 0.999).filter(|&p| p > 0.0).unwrap_or(1.0);
    let data: Vec<u16> = (0..img.len())
        .map(|i| {
            if img.has_data(i) {
                (img.values[i].as_f64() / white * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(img.width as u32, img.height as u32, data)
        .ok_or_else(|| Error::arg("raster size mismatch"))?;
    buf.save_with_format(path.as_ref(), ImageFormat::Png)?;
    Ok(())
}

/// Validity mask: 255 where the image has data, else 0.
pub fn write_mask<T: Real>(path: impl AsRef<Path>, img: &LinearImage<T>) -> Result<()> {
    let codes: Vec<u8> = (0..img.len()).map(|i| if img.has_data(i) { 255 } else { 0 }).collect();
    write_gray(path, img.width, img.height, &codes)
}

pub const FLUX_MAGIC: [u8; 4] = *b"FLUX";

/// Raw flux raster: `FLUX`, u32 width, u32 height, u32 0, then row-major
/// little-endian f32. Pixels without data are NaN.
pub fn write_flux<T: Real>(path: impl AsRef<Path>, img: &LinearImage<T>) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * img.len());
    out.extend_from_slice(&FLUX_MAGIC);
    for v in [img.width as u32, img.height as u32, 0u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..img.len() {
        let v = if img.has_data(i) { img.values[i].as_f64() as f32 } else { f32::NAN };
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads a raster written by [`write_flux`]; NaN pixels come back without
/// data.
pub fn read_flux(path: impl AsRef<Path>) -> Result<LinearImage<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || bytes[..4] != FLUX_MAGIC {
        return Err(Error::Format("not a flux raster".into()));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(4), word(8));
    let expected = 16 + 4 * w * h;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let mut img = LinearImage::zeros(w, h);
    for i in 0..w * h {
        let v = f32::from_le_bytes(bytes[16 + 4 * i..20 + 4 * i].try_into().unwrap());
        if !v.is_nan() {
            img.values[i] = v;
            img.weights[i] = 1.0;
        }
    }
    Ok(img)
}

//! Synthetic photon cubes and conventional-camera frames from a known scene
//! and camera path.
//!
//! The trajectory maps frame pixel coordinates to panorama coordinates: frame
//! `t` sees `scene(W(t) x)`.

use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::config::SimConfig;
use crate::cube::{row_bytes, PhotonCube};
use crate::error::{Error, Result};
use crate::image::LinearImage;
use crate::rng::{FrameRng, DOMAIN_PHOTONS, DOMAIN_READ_NOISE};
use crate::scene::load_panorama;
use crate::trajectory::Trajectory;
use crate::warp::{sample_bilinear, Homography};

/// Errors unless the whole `fov_width x fov_height` frame maps inside the
/// scene under `w`.
pub fn check_fov(
    scene: &LinearImage<f64>,
    w: &Homography<f64>,
    fov_width: usize,
    fov_height: usize,
) -> Result<()> {
    let (xm, ym) = ((fov_width - 1) as f64, (fov_height - 1) as f64);
    let (sx, sy) = ((scene.width - 1) as f64, (scene.height - 1) as f64);
    const SLACK: f64 = 1e-9;
    for (x, y) in [(0.0, 0.0), (xm, 0.0), (0.0, ym), (xm, ym)] {
        let (u, v) = w
            .try_map(x, y)
            .map_err(|e| Error::Simulation(format!("camera warp is degenerate: {e}")))?;
        if !(u >= -SLACK && v >= -SLACK && u <= sx + SLACK && v <= sy + SLACK) {
            return Err(Error::Simulation(format!(
                "field of view leaves the panorama: corner ({x}, {y}) maps to ({u:.2}, {v:.2}) \
                 outside {}x{}",
                scene.width, scene.height
            )));
        }
    }
    Ok(())
}

/// Parameters shared by every frame of a simulation.
#[derive(Debug, Clone, Copy)]
struct Photons {
    fov_width: usize,
    fov_height: usize,
    tau: f64,
    flux_at_white: f64,
    seed: u64,
}

impl Photons {
    fn from_config(cfg: &SimConfig) -> Self {
        Self {
            fov_width: cfg.fov_width,
            fov_height: cfg.fov_height,
            tau: cfg.tau,
            flux_at_white: cfg.flux_at_white,
            seed: cfg.seed,
        }
    }

    /// Writes packed bits of frame `t` into `out`.
    fn fill(&self, scene: &LinearImage<f64>, w: &Homography<f64>, t: usize, out: &mut [u8]) {
        let rb = row_bytes(self.fov_width);
        out.fill(0);
        let mut rng = FrameRng::new(self.seed, DOMAIN_PHOTONS, t as u64);
        let k = self.flux_at_white * self.tau;
        for y in 0..self.fov_height {
            let row = &mut out[y * rb..(y + 1) * rb];
            for x in 0..self.fov_width {
                let (u, v) = w.map(x as f64, y as f64);
                let (val, c) = sample_bilinear(scene, u, v);
                let intensity = if c > 0.0 { (val / c).max(0.0) } else { 0.0 };
                let p = -(-intensity * k).exp_m1();
                // one draw per pixel keeps the stream position equal to the pixel index
                if rng.next_f64() < p {
                    row[x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
    }
}

/// Simulates binary frame `t` seen through `w`; returns packed rows.
pub fn sample_binary_frame(
    scene: &LinearImage<f64>,
    w: &Homography<f64>,
    cfg: &SimConfig,
    t: usize,
) -> Result<Vec<u8>> {
    check_fov(scene, w, cfg.fov_width, cfg.fov_height)?;
    let ph = Photons::from_config(cfg);
    let mut out = vec![0u8; row_bytes(cfg.fov_width) * cfg.fov_height];
    ph.fill(scene, w, t, &mut out);
    Ok(out)
}

/// Loads the configured panorama and simulates the full sequence.
pub fn simulate_sequence(cfg: &SimConfig) -> Result<(PhotonCube, Trajectory<f64>)> {
    let scene = load_panorama(&cfg.panorama_path)?;
    simulate_with_scene(&scene, cfg)
}

/// Simulates `cfg.num_frames` frames of `scene`; returns the cube and the
/// ground-truth trajectory (one knot per control point).
pub fn simulate_with_scene(
    scene: &LinearImage<f64>,
    cfg: &SimConfig,
) -> Result<(PhotonCube, Trajectory<f64>)> {
    cfg.validate()?;
    let traj = cfg.trajectory.trajectory()?;
    let warps = (0..cfg.num_frames)
        .map(|t| {
            let w = traj.homography_at(t as f64)?;
            check_fov(scene, &w, cfg.fov_width, cfg.fov_height)
                .map_err(|e| Error::Simulation(format!("frame {t}: {e}")))?;
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?;
    let ph = Photons::from_config(cfg);
    let fb = row_bytes(cfg.fov_width) * cfg.fov_height;
    let mut data = vec![0u8; fb * cfg.num_frames];
    data.par_chunks_mut(fb)
        .enumerate()
        .for_each(|(t, out)| ph.fill(scene, &warps[t], t, out));
    let cube = PhotonCube::from_packed(cfg.fov_width, cfg.fov_height, cfg.num_frames, cfg.tau, data)?;
    Ok((cube, traj))
}

/// Conventional-camera frame integrated over the frames in `window`.
///
/// The scene is averaged over 8 instants evenly spaced across the window
/// (motion blur), then Gaussian read noise of `read_noise_sigma` electrons,
/// expressed in intensity units, is added and the result clamped at zero.
pub fn simulate_rgb(
    scene: &LinearImage<f64>,
    traj: &Trajectory<f64>,
    window: Range<usize>,
    cfg: &SimConfig,
) -> Result<LinearImage<f64>> {
    const SUBSAMPLES: usize = 8;
    if window.is_empty() {
        return Err(Error::arg("exposure window is empty"));
    }
    let len = window.len() as f64;
    let warps = (0..SUBSAMPLES)
        .map(|j| {
            let t = window.start as f64 + (j as f64 + 0.5) * len / SUBSAMPLES as f64;
            let w = traj.homography_at(t)?;
            check_fov(scene, &w, cfg.fov_width, cfg.fov_height)?;
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?;
    let (fw, fh) = (cfg.fov_width, cfg.fov_height);
    let mut values = vec![0.0; fw * fh];
    for w in &warps {
        for y in 0..fh {
            for x in 0..fw {
                let (u, v) = w.map(x as f64, y as f64);
                let (val, c) = sample_bilinear(scene, u, v);
                if c > 0.0 {
                    values[y * fw + x] += val / c;
                }
            }
        }
    }
    let sigma = cfg.read_noise_sigma / (cfg.flux_at_white * len * cfg.tau);
    let mut rng = FrameRng::new(cfg.seed, DOMAIN_READ_NOISE, window.start as u64);
    for v in &mut values {
        *v /= SUBSAMPLES as f64;
        if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng.inner_mut());
            *v = (*v + sigma * z).max(0.0);
        }
    }
    Ok(LinearImage::from_values(fw, fh, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrajectorySpec;
    use crate::warp::WarpParams;
    use std::path::PathBuf;

    fn cfg(n: usize, fov: usize, flux: f64) -> SimConfig {
        SimConfig {
            panorama_path: PathBuf::new(),
            fov_width: fov,
            fov_height: fov,
            num_frames: n,
            tau: 1.0,
            flux_at_white: flux,
            trajectory: TrajectorySpec::fixed(n, WarpParams::zero()),
            seed: 11,
            read_noise_sigma: 0.0,
            rgb_exposure_frames: 0,
        }
    }

    #[test]
    fn dark_scene_gives_no_detections() {
        let scene = LinearImage::constant(20, 20, 0.0);
        let f = sample_binary_frame(&scene, &Homography::identity(), &cfg(1, 16, 5.0), 0).unwrap();
        assert!(f.iter().all(|&b| b == 0));
    }

    #[test]
    fn fov_must_stay_inside() {
        let scene = LinearImage::constant(20, 20, 0.5);
        let c = cfg(1, 16, 1.0);
        assert!(sample_binary_frame(&scene, &Homography::translation(4.0, 0.0), &c, 0).is_ok());
        let r = sample_binary_frame(&scene, &Homography::translation(4.5, 0.0), &c, 0);
        assert!(matches!(r, Err(Error::Simulation(_))));
    }

    #[test]
    fn single_frame_sequence_matches_frame_sampler() {
        let scene = crate::scene::textured(40, 40, 2);
        let c = cfg(1, 24, 1.0);
        let (cube, traj) = simulate_with_scene(&scene, &c).unwrap();
        let f = sample_binary_frame(&scene, &Homography::identity(), &c, 0).unwrap();
        assert_eq!(cube.packed(), &f[..]);
        assert_eq!(traj.knots().len(), 2);
    }

    #[test]
    fn sequence_is_reproducible() {
        let scene = crate::scene::textured(40, 40, 2);
        let c = cfg(50, 24, 1.0);
        let (a, _) = simulate_with_scene(&scene, &c).unwrap();
        let (b, _) = simulate_with_scene(&scene, &c).unwrap();
        assert_eq!(a.packed(), b.packed());
        let mut c2 = c.clone();
        c2.seed += 1;
        assert_ne!(simulate_with_scene(&scene, &c2).unwrap().0.packed(), a.packed());
    }

    #[test]
    fn static_rgb_without_noise_is_the_crop() {
        let scene = crate::scene::textured(40, 40, 2);
        let mut c = cfg(100, 24, 1.0);
        c.trajectory = TrajectorySpec::fixed(100, WarpParams::translation(3.0, 5.0));
        let traj = c.trajectory.trajectory().unwrap();
        let img = simulate_rgb(&scene, &traj, 10..60, &c).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                assert!((img.get(x, y) - scene.get(x + 3, y + 5)).abs() < 1e-12);
            }
        }
    }
}

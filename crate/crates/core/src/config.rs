//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear at
//! most once. Errors carry the 1-based line number they refer to; errors
//! about missing keys use line 0.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trajectory::{Knot, Trajectory};
use crate::warp::WarpParams;

/// Parsed entries in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    line: usize,
    key: String,
    value: String,
    used: bool,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let Some((k, v)) = s.split_once('=') else {
                return Err(Error::Config {
                    line,
                    msg: format!("expected `key = value`, got `{s}`"),
                });
            };
            let key = k.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::Config {
                    line,
                    msg: format!("invalid key `{key}`"),
                });
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Config {
                    line,
                    msg: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
            entries.push(Entry {
                line,
                key: key.to_string(),
                value: v.trim().to_string(),
                used: false,
            });
        }
        Ok(Self { entries })
    }

    /// Raw value and line of `key`, marking it as consumed.
    pub fn take(&mut self, key: &str) -> Option<(usize, String)> {
        let e = self.entries.iter_mut().find(|e| e.key == key)?;
        e.used = true;
        Some((e.line, e.value.clone()))
    }

    pub fn take_parsed<V: FromStr>(&mut self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Config {
                line,
                msg: format!("invalid value for `{key}`: {e}"),
            }),
        }
    }

    pub fn require<V: FromStr>(&mut self, key: &str) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        self.take_parsed(key)?.ok_or_else(|| Error::Config {
            line: 0,
            msg: format!("missing required key `{key}`"),
        })
    }

    /// Fails on the first key that was never consumed.
    pub fn finish(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.used) {
            Some(e) => Err(Error::Config {
                line: e.line,
                msg: format!("unknown key `{}`", e.key),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Straight-line motion between exactly two control points.
    LinearPan,
    /// Natural cubic spline through two or more control points.
    SplinePath,
}

impl FromStr for TrajectoryKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear_pan" => Ok(Self::LinearPan),
            "spline_path" => Ok(Self::SplinePath),
            _ => Err(format!("expected linear_pan or spline_path, got `{s}`")),
        }
    }
}

impl TrajectoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LinearPan => "linear_pan",
            Self::SplinePath => "spline_path",
        }
    }
}

/// Ground-truth camera path: warps from frame coordinates to panorama
/// coordinates at the given frame times.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub control_points: Vec<Knot<f64>>,
}

impl TrajectorySpec {
    /// A camera that never moves from `params`.
    pub fn fixed(num_frames: usize, params: WarpParams<f64>) -> Self {
        let end = num_frames.saturating_sub(1).max(1) as f64;
        Self {
            kind: TrajectoryKind::LinearPan,
            control_points: vec![Knot::new(0.0, params), Knot::new(end, params)],
        }
    }

    pub fn linear(t0: f64, p0: WarpParams<f64>, t1: f64, p1: WarpParams<f64>) -> Self {
        Self {
            kind: TrajectoryKind::LinearPan,
            control_points: vec![Knot::new(t0, p0), Knot::new(t1, p1)],
        }
    }

    pub fn spline(control_points: Vec<Knot<f64>>) -> Self {
        Self {
            kind: TrajectoryKind::SplinePath,
            control_points,
        }
    }

    pub fn trajectory(&self) -> Result<Trajectory<f64>> {
        if self.kind == TrajectoryKind::LinearPan && self.control_points.len() != 2 {
            return Err(Error::arg(format!(
                "linear_pan takes exactly 2 control points, got {}",
                self.control_points.len()
            )));
        }
        if self.control_points.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::arg("control points must be strictly increasing in t"));
        }
        Trajectory::fit(self.control_points.clone())
    }

    /// `t p1 ... p8` knots separated by `;`.
    pub fn format_points(&self) -> String {
        self.control_points
            .iter()
            .map(|k| {
                std::iter::once(k.t)
                    .chain(k.params.0)
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn parse_points(s: &str) -> std::result::Result<Vec<Knot<f64>>, String> {
        s.split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                let v: Vec<f64> = p
                    .split_whitespace()
                    .map(|x| x.parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
                    .collect::<std::result::Result<_, _>>()?;
                if v.len() != 9 {
                    return Err(format!("control point needs 9 numbers (t p1..p8), got {}", v.len()));
                }
                let mut p = [0.0; 8];
                p.copy_from_slice(&v[1..]);
                Ok(Knot::new(v[0], WarpParams(p)))
            })
            .collect()
    }
}

/// Simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub panorama_path: PathBuf,
    pub fov_width: usize,
    pub fov_height: usize,
    pub num_frames: usize,
    /// Binary frame exposure in seconds.
    pub tau: f64,
    /// Photon flux (per second) of linear intensity 1.0.
    pub flux_at_white: f64,
    pub trajectory: TrajectorySpec,
    pub seed: u64,
    /// Conventional-camera read noise in electrons.
    pub read_noise_sigma: f64,
    /// Frames per conventional exposure; 0 disables the baseline.
    pub rgb_exposure_frames: usize,
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = FlatConfig::parse(text)?;
        let panorama_path: String = kv.require("panorama_path")?;
        let fov_width: usize = kv.require("fov_width")?;
        let fov_height: usize = kv.require("fov_height")?;
        let num_frames: usize = kv.require("num_frames")?;
        let tau: f64 = kv.require("tau")?;
        let flux_at_white: f64 = kv.require("flux_at_white")?;
        let seed: u64 = kv.require("seed")?;
        let kind = kv
            .take_parsed::<TrajectoryKind>("trajectory_kind")?
            .unwrap_or(TrajectoryKind::LinearPan);
        let control_points = match kv.take("trajectory") {
            Some((line, v)) => {
                TrajectorySpec::parse_points(&v).map_err(|msg| Error::Config { line, msg })?
            }
            None => TrajectorySpec::fixed(num_frames, WarpParams::zero()).control_points,
        };
        let read_noise_sigma = kv.take_parsed("read_noise_sigma")?.unwrap_or(0.0);
        let rgb_exposure_frames = kv.take_parsed("rgb_exposure_frames")?.unwrap_or(0);
        kv.finish()?;
        let cfg = Self {
            panorama_path: PathBuf::from(panorama_path),
            fov_width,
            fov_height,
            num_frames,
            tau,
            flux_at_white,
            trajectory: TrajectorySpec {
                kind,
                control_points,
            },
            seed,
            read_noise_sigma,
            rgb_exposure_frames,
        };
        cfg.validate().map_err(|e| Error::Config {
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `panorama_path` is resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        if cfg.panorama_path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.panorama_path = dir.join(&cfg.panorama_path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fov_width == 0 || self.fov_height == 0 {
            return Err(Error::arg("field of view must be non-empty"));
        }
        if self.num_frames == 0 {
            return Err(Error::arg("num_frames must be positive"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::arg("tau must be positive"));
        }
        if !(self.flux_at_white > 0.0 && self.flux_at_white.is_finite()) {
            return Err(Error::arg("flux_at_white must be positive"));
        }
        if !(self.read_noise_sigma >= 0.0) {
            return Err(Error::arg("read_noise_sigma must be non-negative"));
        }
        self.trajectory.trajectory().map(|_| ())
    }

    pub fn to_text(&self) -> String {
        format!(
            "panorama_path = {}\nfov_width = {}\nfov_height = {}\nnum_frames = {}\ntau = {:?}\n\
             flux_at_white = {:?}\nseed = {}\ntrajectory_kind = {}\ntrajectory = {}\n\
             read_noise_sigma = {:?}\nrgb_exposure_frames = {}\n",
            self.panorama_path.display(),
            self.fov_width,
            self.fov_height,
            self.num_frames,
            self.tau,
            self.flux_at_white,
            self.seed,
            self.trajectory.kind.as_str(),
            self.trajectory.format_points(),
            self.read_noise_sigma,
            self.rgb_exposure_frames,
        )
    }
}

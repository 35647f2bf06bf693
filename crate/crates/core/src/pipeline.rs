//! Iterative trajectory estimation: group frames, merge each group with the
//! current motion estimate, register consecutive merged images, chain the
//! results into knots, refit the spline, repeat.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use log::{debug, info, warn};
use rayon::prelude::*;

use crate::cube::PhotonCube;
use crate::error::{Error, Result};
use crate::image::{mle_flux_weighted, FractionImage, LinearImage};
use crate::registration::{
    corner_displacement_h, DirectAligner, Registrar, RegistrationOptions, RegistrationResult,
};
use crate::scalar::Real;
use crate::trajectory::{Knot, Trajectory};
use crate::warp::{accumulate_warp_interior, scale_warp, Homography, Region, WarpParams};

/// A run of `length` consecutive frames localized to frame `reference`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Group {
    pub start: usize,
    pub length: usize,
    pub reference: usize,
}

impl Group {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub group_size: usize,
    pub max_iterations: usize,
    /// Stop once no knot moves more than this (corner RMS, pixels).
    pub convergence_epsilon: f64,
    /// Merge resolution factor for iteration `k` (1-based) is entry `k - 1`;
    /// the last entry repeats and an empty schedule means 1.
    pub scale_schedule: Vec<f64>,
    /// Add groups referenced to the first and last frame from iteration 2.
    pub add_boundary_groups: bool,
    /// Fail when more than this fraction of knots is flagged.
    pub max_flagged_fraction: f64,
    pub registration: RegistrationOptions,
    /// Write merged images and a manifest here.
    pub dump_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            group_size: 500,
            max_iterations: 5,
            convergence_epsilon: 0.5,
            scale_schedule: Vec::new(),
            add_boundary_groups: true,
            max_flagged_fraction: 0.5,
            registration: RegistrationOptions::default(),
            dump_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn with_group_size(group_size: usize) -> Self {
        Self {
            group_size,
            ..Self::default()
        }
    }

    pub fn scale_for(&self, iteration: usize) -> f64 {
        match self.scale_schedule.len() {
            0 => 1.0,
            len => self.scale_schedule[(iteration.max(1) - 1).min(len - 1)],
        }
    }
}

/// Groups for iteration `iteration` (1-based).
///
/// Iteration 1 tiles the sequence with `n / m` disjoint groups referenced to
/// their center frames. Later iterations keep that base lattice (so its
/// references are re-estimated every time) and add `n / m - 1` groups
/// referenced `m / 2^(k-1)` frames after each base reference but the last,
/// plus, if requested, two boundary groups referenced to the first and last
/// frame. The result is sorted by reference frame.
pub fn make_groups(n: usize, m: usize, iteration: usize, add_boundary_groups: bool) -> Result<Vec<Group>> {
    if m == 0 || m > n {
        return Err(Error::arg(format!("group size {m} must be in [1, {n}]")));
    }
    if iteration == 0 {
        return Err(Error::arg("iterations are counted from 1"));
    }
    let base_count = n / m;
    let mut groups: Vec<Group> = (0..base_count)
        .map(|j| Group {
            start: j * m,
            length: m,
            reference: j * m + m / 2,
        })
        .collect();
    if iteration >= 2 {
        let shift = u32::try_from(iteration - 1)
            .ok()
            .and_then(|k| m.checked_shr(k))
            .unwrap_or(0);
        let centered = |reference: usize| Group {
            start: reference.saturating_sub(m / 2).min(n - m),
            length: m,
            reference,
        };
        if shift >= 1 {
            for j in 0..base_count.saturating_sub(1) {
                groups.push(centered(groups[j].reference + shift));
            }
        }
        if add_boundary_groups {
            groups.push(Group {
                start: 0,
                length: m,
                reference: 0,
            });
            groups.push(Group {
                start: n - m,
                length: m,
                reference: n - 1,
            });
        }
    }
    groups.sort_by_key(|g| g.reference);
    groups.dedup_by_key(|g| g.reference);
    Ok(groups)
}

fn inverse_scale<T: Real>(s: T) -> Homography<T> {
    let z = T::zero();
    Homography::from_matrix([[T::one() / s, z, z], [z, T::one() / s, z], [z, z, T::one()]])
        .expect("positive scale")
}

fn is_static<T: Real>(traj: &Trajectory<T>) -> bool {
    traj.knots().iter().all(|k| k.params == WarpParams::zero())
}

/// Merged flux image of `group`, in the coordinates of its reference frame.
pub fn merge_group<T: Real>(cube: &PhotonCube, group: &Group, traj: &Trajectory<T>) -> Result<LinearImage<T>> {
    merge_group_scaled(cube, group, traj, T::one())
}

/// As [`merge_group`] on a grid `scale` times finer than the sensor.
pub fn merge_group_scaled<T: Real>(
    cube: &PhotonCube,
    group: &Group,
    traj: &Trajectory<T>,
    scale: T,
) -> Result<LinearImage<T>> {
    if group.length == 0 || group.start + group.length > cube.num_frames() || !group.frames().contains(&group.reference) {
        return Err(Error::arg(format!("invalid group {group:?} for {} frames", cube.num_frames())));
    }
    let (w, h) = (cube.width(), cube.height());
    let unit = scale == T::one();
    let (cw, ch) = if unit {
        (w, h)
    } else {
        (
            (T::from_usize_lossy(w) * scale).round().to_usize().unwrap_or(0),
            (T::from_usize_lossy(h) * scale).round().to_usize().unwrap_or(0),
        )
    };
    let mut sum = vec![T::zero(); cw * ch];
    let mut weight = vec![T::zero(); cw * ch];
    if unit && is_static(traj) {
        let idx: Vec<usize> = group.frames().collect();
        for (s, c) in sum.iter_mut().zip(cube.count_frames(&idx)) {
            *s = T::lit(c as f64);
        }
        weight.fill(T::from_usize_lossy(group.length));
    } else {
        let unscale = inverse_scale(scale);
        let r = T::from_usize_lossy(group.reference);
        let w_ref = traj.homography_at(r)?;
        for i in group.frames() {
            // canvas (reference frame, scaled) -> frame i
            let inv = traj
                .homography_at(T::from_usize_lossy(i))?
                .invert()?
                .compose(&w_ref)?
                .compose(&unscale)?;
            accumulate_warp_interior(
                &cube.frame(i),
                &inv,
                Region::full(cw, ch),
                (T::zero(), T::zero()),
                &mut sum,
                &mut weight,
            );
        }
    }
    if weight.iter().all(|&v| v <= T::zero()) {
        return Err(Error::EmptyMerge { start: group.start });
    }
    let fraction = sum
        .iter()
        .zip(&weight)
        .map(|(&s, &c)| if c > T::zero() { (s / c).min(T::one()).max(T::zero()) } else { T::zero() })
        .collect();
    mle_flux_weighted(&FractionImage::new(cw, ch, fraction), &weight, T::lit(cube.tau()))
}

/// Outcome of registering one merged image against its predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome<T> {
    pub result: Option<RegistrationResult<T>>,
    /// Why the pair was flagged, if it was.
    pub failure: Option<String>,
}

impl<T> PairOutcome<T> {
    pub fn flagged(&self) -> bool {
        self.failure.is_some()
    }
}

/// A located knot plus whether it came from a failed registration.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedKnot<T> {
    pub knot: Knot<T>,
    pub flagged: bool,
}

/// Registers consecutive merged images and chains them into absolute warps.
///
/// `merged[g]` must be in the coordinates of frame `refs[g]` scaled by
/// `scale`. The first knot is the prior warp of `refs[0]` relative to
/// `t_anchor`; knot `g` is knot `g - 1` composed with the inverse of the
/// registration of pair `(g - 1, g)`. A pair that fails to register falls
/// back to the prior relative warp and flags its knot.
pub fn locate<T: Real>(
    merged: &[LinearImage<T>],
    refs: &[usize],
    traj_prev: &Trajectory<T>,
    t_anchor: T,
    scale: T,
    registrar: &dyn Registrar<T>,
) -> Result<(Vec<LocatedKnot<T>>, Vec<PairOutcome<T>>)> {
    if merged.len() != refs.len() || merged.len() < 2 {
        return Err(Error::arg("locate needs at least two merged images, one per reference"));
    }
    let t = |r: usize| T::from_usize_lossy(r);
    let priors = (1..refs.len())
        .map(|g| traj_prev.relative_warp(t(refs[g]), t(refs[g - 1])))
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<PairOutcome<T>> = (1..refs.len())
        .into_par_iter()
        .map(|g| {
            let init = scale_warp(&priors[g - 1], scale).to_params();
            match registrar.register(&merged[g], &merged[g - 1], &init) {
                Ok(r) if r.converged => PairOutcome {
                    result: Some(r),
                    failure: None,
                },
                Ok(r) => PairOutcome {
                    result: Some(r),
                    failure: Some("registration did not converge".into()),
                },
                Err(e) => PairOutcome {
                    result: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();

    let mut absolute = traj_prev.relative_warp(t_anchor, t(refs[0]))?;
    let mut knots = vec![LocatedKnot {
        knot: Knot::new(t(refs[0]), absolute.to_params()),
        flagged: false,
    }];
    for g in 1..refs.len() {
        let out = &outcomes[g - 1];
        let step = match (&out.result, out.flagged()) {
            (Some(r), false) => {
                let a = Homography::from_params(&r.warp)?;
                scale_warp(&a, T::one() / scale)
            }
            _ => priors[g - 1],
        };
        absolute = absolute.compose(&step.invert()?)?;
        let mut knot = Knot::new(t(refs[g]), absolute.to_params());
        if let Some(r) = &out.result {
            knot.confidence = r.residual;
        }
        knots.push(LocatedKnot {
            knot,
            flagged: out.flagged(),
        });
    }
    Ok((knots, outcomes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDiagnostic<T> {
    pub group: Group,
    /// Residual of the registration that placed this group; `None` for the
    /// first group and for failed registrations.
    pub residual: Option<T>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationDiagnostics<T> {
    pub iteration: usize,
    pub scale: T,
    pub groups: Vec<GroupDiagnostic<T>>,
    pub registrations: usize,
    pub flagged: usize,
    pub knot_count: usize,
    /// Largest corner displacement of any knot relative to the previous
    /// trajectory.
    pub max_knot_change: T,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics<T> {
    pub iterations: Vec<IterationDiagnostics<T>>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl<T: Real> Diagnostics<T> {
    pub fn registrations_per_iteration(&self) -> Vec<usize> {
        self.iterations.iter().map(|d| d.registrations).collect()
    }
}

/// Estimation state between iterations.
#[derive(Debug, Clone)]
pub struct PipelineState<'a, T> {
    pub cube: &'a PhotonCube,
    pub trajectory: Trajectory<T>,
    pub iteration: usize,
    pub groups: Vec<Group>,
    /// Every knot located so far, keyed by reference frame.
    pub knots: BTreeMap<usize, Knot<T>>,
    /// Reference frame held at the identity.
    pub anchor: usize,
    pub diagnostics: Diagnostics<T>,
}

impl<'a, T: Real> PipelineState<'a, T> {
    /// Identity motion over the whole sequence, anchored at the first
    /// base reference.
    pub fn new(cube: &'a PhotonCube, cfg: &PipelineConfig) -> Result<Self> {
        let n = cube.num_frames();
        check_group_size(n, cfg.group_size)?;
        Ok(Self {
            cube,
            trajectory: Trajectory::identity(T::zero(), T::from_usize_lossy(n.max(2) - 1)),
            iteration: 0,
            groups: Vec::new(),
            knots: BTreeMap::new(),
            anchor: cfg.group_size / 2,
            diagnostics: Diagnostics::default(),
        })
    }
}

fn check_group_size(n: usize, m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::arg(format!("group size must be at least 2, got {m}")));
    }
    if m > n {
        return Err(Error::arg(format!("group size {m} exceeds the {n} available frames")));
    }
    Ok(())
}

/// Largest corner displacement between two trajectories over `times`.
pub fn max_change<T: Real>(a: &Trajectory<T>, b: &Trajectory<T>, times: &[T], width: usize, height: usize) -> Result<T> {
    let mut worst = T::zero();
    for &t in times {
        let d = corner_displacement_h(&a.homography_at(t)?, &b.homography_at(t)?, width, height);
        worst = worst.max(d);
    }
    Ok(worst)
}

/// One pass of grouping, merging, locating and refitting.
pub fn run_iteration<'a, T: Real>(
    mut state: PipelineState<'a, T>,
    cfg: &PipelineConfig,
    registrar: &dyn Registrar<T>,
) -> Result<PipelineState<'a, T>> {
    let cube = state.cube;
    let (n, m) = (cube.num_frames(), cfg.group_size);
    let k = state.iteration + 1;
    let scale = T::lit(cfg.scale_for(k));
    if !(scale > T::zero()) {
        return Err(Error::arg("merge scale must be positive"));
    }
    let groups = make_groups(n, m, k, cfg.add_boundary_groups)?;
    if groups.len() < 2 {
        return Err(Error::Pipeline(format!("{n} frames with group size {m} give a single group")));
    }
    let merged = groups
        .par_iter()
        .map(|g| merge_group_scaled(cube, g, &state.trajectory, scale))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<usize> = groups.iter().map(|g| g.reference).collect();
    let anchor = T::from_usize_lossy(state.anchor);
    let (located, outcomes) = locate(&merged, &refs, &state.trajectory, anchor, scale, registrar)?;

    let flagged = located.iter().filter(|l| l.flagged).count();
    let mut diag_groups = Vec::with_capacity(groups.len());
    for (g, group) in groups.iter().enumerate() {
        let out = g.checked_sub(1).map(|i| &outcomes[i]);
        diag_groups.push(GroupDiagnostic {
            group: *group,
            residual: out.filter(|o| !o.flagged()).and_then(|o| o.result.map(|r| r.residual)),
            flagged: out.is_some_and(|o| o.flagged()),
        });
    }
    if let Some(dir) = &cfg.dump_dir {
        dump_merged(dir, k, &merged, &diag_groups)?;
    }
    if flagged as f64 > cfg.max_flagged_fraction * located.len() as f64 {
        return Err(Error::Pipeline(format!(
            "iteration {k}: {flagged} of {} knots failed to register",
            located.len()
        )));
    }
    for l in located {
        if !l.flagged {
            state.knots.insert(l.knot.t.to_usize().unwrap_or(0), l.knot);
        }
    }
    if state.knots.len() < 2 {
        return Err(Error::Pipeline(format!("iteration {k}: fewer than two usable knots")));
    }
    let fitted = Trajectory::fit(state.knots.values().cloned().collect())?;
    let trajectory = fitted.reanchored(anchor)?;
    // keep the stored knots in the anchored gauge
    state.knots = trajectory
        .knots()
        .iter()
        .map(|kn| (kn.t.to_usize().unwrap_or(0), *kn))
        .collect();
    let times: Vec<T> = trajectory.knots().iter().map(|kn| kn.t).collect();
    let change = max_change(&state.trajectory, &trajectory, &times, cube.width(), cube.height())?;
    info!(
        "iteration {k}: {} groups, {} registrations, {flagged} flagged, {} knots, max knot change {:.3} px",
        groups.len(),
        outcomes.len(),
        trajectory.knots().len(),
        change.as_f64()
    );
    state.diagnostics.iterations.push(IterationDiagnostics {
        iteration: k,
        scale,
        groups: diag_groups,
        registrations: outcomes.len(),
        flagged,
        knot_count: trajectory.knots().len(),
        max_knot_change: change,
    });
    state.trajectory = trajectory;
    state.groups = groups;
    state.iteration = k;
    Ok(state)
}

fn dump_merged<T: Real>(
    dir: &std::path::Path,
    iteration: usize,
    merged: &[LinearImage<T>],
    groups: &[GroupDiagnostic<T>],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (img, g) in merged.iter().zip(groups) {
        let name = format!("iter{iteration:02}_ref{:06}.pgm", g.group.reference);
        let tm = crate::tone::tonemap(img, crate::tone::default_exposure(img));
        crate::render::write_gray(dir.join(&name), tm.width, tm.height, &tm.codes)?;
        let residual = g.residual.map_or("-".to_string(), |r| format!("{:.6e}", r.as_f64()));
        let _ = writeln!(manifest, "{iteration} {} {residual} {name}", g.group.reference);
    }
    let path = dir.join("manifest.txt");
    let mut text = if path.exists() && iteration > 1 {
        std::fs::read_to_string(&path)?
    } else {
        "# iteration reference residual file\n".to_string()
    };
    text.push_str(&manifest);
    std::fs::write(path, text)?;
    Ok(())
}

/// Final estimate of [`run`].
#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    /// Maps frame-`t` coordinates to the coordinates of the anchor frame.
    pub trajectory: Trajectory<T>,
    pub diagnostics: Diagnostics<T>,
}

/// Iterates to convergence with the default registration backend.
pub fn run<T: Real>(cube: &PhotonCube, cfg: &PipelineConfig) -> Result<PipelineOutput<T>> {
    run_with(cube, cfg, &DirectAligner::new(cfg.registration.clone()))
}

/// Iterates to convergence with a caller-supplied registration backend.
pub fn run_with<T: Real>(
    cube: &PhotonCube,
    cfg: &PipelineConfig,
    registrar: &dyn Registrar<T>,
) -> Result<PipelineOutput<T>> {
    let n = cube.num_frames();
    let m = cfg.group_size;
    check_group_size(n, m)?;
    if n < 2 * m {
        let msg = format!("{n} frames hold a single group of {m}; returning a static trajectory");
        warn!("{msg}");
        return Ok(PipelineOutput {
            trajectory: Trajectory::identity(T::zero(), T::from_usize_lossy(n.max(2) - 1)),
            diagnostics: Diagnostics {
                iterations: Vec::new(),
                converged: true,
                warnings: vec![msg],
            },
        });
    }
    let mut state = PipelineState::new(cube, cfg)?;
    let eps = T::lit(cfg.convergence_epsilon);
    for _ in 0..cfg.max_iterations.max(1) {
        state = run_iteration(state, cfg, registrar)?;
        let last = state.diagnostics.iterations.last().expect("iteration recorded");
        if last.max_knot_change < eps {
            debug!("converged after {} iterations", state.iteration);
            state.diagnostics.converged = true;
            break;
        }
    }
    if !state.diagnostics.converged {
        let msg = format!("no convergence within {} iterations", state.iteration);
        warn!("{msg}");
        state.diagnostics.warnings.push(msg);
    }
    Ok(PipelineOutput {
        trajectory: state.trajectory,
        diagnostics: state.diagnostics,
    })
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use photonpano::config::SimConfig;
use photonpano::cube::read_header;
use photonpano::metrics::{psnr, reference_on_canvas, scene_from_global, trajectory_rmse, Metrics};
use photonpano::pipeline::{run, Diagnostics, PipelineConfig};
use photonpano::registration::RegistrationOptions;
use photonpano::render::{assemble, canvas_bounds, read_flux, write_flux, write_gray, write_mask, write_png16, RenderConfig};
use photonpano::scalar::Real;
use photonpano::scene::load_panorama;
use photonpano::simulator::{simulate_rgb, simulate_with_scene};
use photonpano::tone::{default_exposure, linear_to_srgb, tonemap};
use photonpano::trajectory::Trajectory;
use photonpano::{Error, PhotonCube, Result};

const THREADS_VAR: &str = "PHOTONPANO_THREADS";

#[derive(Parser)]
#[command(name = "photonpano", version, about = "Panoramas and camera motion from single-photon binary frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a binary frame cube and its ground-truth trajectory.
    Simulate(SimulateArgs),
    /// Estimate the trajectory of a cube and assemble the panorama.
    Reconstruct(ReconstructArgs),
    /// Compare an estimated trajectory (and panorama) with ground truth.
    Evaluate(EvaluateArgs),
    /// Print the header of a cube file.
    Info {
        cube: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Flat `key = value` simulation config.
    config: PathBuf,
    /// Output directory for cube.pcube, truth.csv and baseline frames.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args)]
struct ReconstructArgs {
    cube: PathBuf,
    #[arg(long, default_value_t = 500)]
    group_size: usize,
    /// Maximum number of refinement iterations.
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    /// Convergence threshold on the largest knot change, in pixels.
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    /// Super-resolution factor of the assembled panorama.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value = "reconstruction")]
    out: PathBuf,
    /// Write every merged group image and a manifest under OUT/intermediates.
    #[arg(long)]
    dump_intermediates: bool,
    /// Registration pyramid levels (automatic when omitted).
    #[arg(long)]
    levels: Option<usize>,
    /// Registration iterations per pyramid level.
    #[arg(long, default_value_t = 50)]
    reg_iterations: usize,
    /// Registration stopping threshold on the update norm.
    #[arg(long, default_value_t = 1e-6)]
    reg_tolerance: f64,
    /// Use every N-th frame when assembling.
    #[arg(long, default_value_t = 1)]
    frame_stride: usize,
    /// Simulation config of the cube, for accuracy metrics.
    #[arg(long)]
    truth_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
}

#[derive(Args)]
struct EvaluateArgs {
    estimate: PathBuf,
    truth: PathBuf,
    /// Sensor size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_dims)]
    fov: (usize, usize),
    /// Flux raster written by `reconstruct`; needs --truth-config.
    #[arg(long)]
    panorama: Option<PathBuf>,
    #[arg(long)]
    truth_config: Option<PathBuf>,
    /// Scale the panorama was assembled at.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Frame count of the sequence (default: last knot time + 1).
    #[arg(long)]
    frames: Option<usize>,
    /// Also write the metrics here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((w, h))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match configure_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Argument(format!("{THREADS_VAR} must be a non-negative integer, got `{v}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Argument(format!("cannot start {n} workers: {e}")))?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(&a),
        Command::Reconstruct(a) => match a.precision {
            Precision::F32 => reconstruct::<f32>(&a),
            Precision::F64 => reconstruct::<f64>(&a),
        },
        Command::Evaluate(a) => evaluate(&a),
        Command::Info { cube } => cube_info(&cube),
    }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = SimConfig::load(&a.config)?;
    let scene = load_panorama(&cfg.panorama_path)?;
    let (cube, truth) = simulate_with_scene(&scene, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    cube.save(a.out.join("cube.pcube"))?;
    truth.save_csv(a.out.join("truth.csv"))?;
    if cfg.rgb_exposure_frames > 0 {
        let dir = a.out.join("rgb");
        std::fs::create_dir_all(&dir)?;
        let len = cfg.rgb_exposure_frames;
        for (k, start) in (0..cfg.num_frames / len).map(|k| (k, k * len)) {
            let img = simulate_rgb(&scene, &truth, start..start + len, &cfg)?;
            write_gray(dir.join(format!("frame_{k:05}.png")), img.width, img.height, &linear_to_srgb(&img))?;
        }
    }
    println!(
        "wrote {} frames of {}x{} to {}",
        cube.num_frames(),
        cube.width(),
        cube.height(),
        a.out.display()
    );
    Ok(())
}

fn reconstruct<T: Real>(a: &ReconstructArgs) -> Result<()> {
    let start = Instant::now();
    let cube = PhotonCube::load(&a.cube)?;
    if a.group_size > cube.num_frames() {
        return Err(Error::Argument(format!(
            "--group-size {} exceeds the {} frames in the cube",
            a.group_size,
            cube.num_frames()
        )));
    }
    if !(a.scale > 0.0) {
        return Err(Error::Argument("--scale must be positive".into()));
    }
    std::fs::create_dir_all(&a.out)?;
    let mut cfg = PipelineConfig::with_group_size(a.group_size);
    cfg.max_iterations = a.iterations.max(1);
    cfg.convergence_epsilon = a.epsilon;
    cfg.registration = RegistrationOptions {
        levels: a.levels,
        max_iterations: a.reg_iterations,
        tolerance: a.reg_tolerance,
        ..Default::default()
    };
    if a.dump_intermediates {
        cfg.dump_dir = Some(a.out.join("intermediates"));
    }
    let diag_path = a.out.join("diagnostics.txt");
    let output = match run::<T>(&cube, &cfg) {
        Ok(o) => o,
        Err(e) => {
            std::fs::write(&diag_path, format!("error[{}]: {e}\n", e.class()))?;
            return Err(match e {
                Error::Pipeline(msg) => Error::Pipeline(format!("{msg} (diagnostics: {})", diag_path.display())),
                other => other,
            });
        }
    };
    std::fs::write(&diag_path, diagnostics_text(&output.diagnostics))?;
    let traj = output.trajectory;
    traj.save_csv(a.out.join("trajectory.csv"))?;

    let rcfg = RenderConfig {
        scale: a.scale,
        frame_stride: a.frame_stride.max(1),
        ..Default::default()
    };
    let canvas = assemble(&cube, &traj, &rcfg)?;
    let flux = canvas.flux(cube.tau(), rcfg.weight_min)?;
    let tm = tonemap(&flux, default_exposure(&flux));
    write_gray(a.out.join("panorama.png"), tm.width, tm.height, &tm.codes)?;
    write_png16(a.out.join("panorama16.png"), &flux)?;
    write_mask(a.out.join("mask.pgm"), &flux)?;
    write_flux(a.out.join("panorama.flux"), &flux)?;

    let mut metrics = Metrics {
        coverage_fraction: flux.coverage(),
        registrations_per_iteration: output.diagnostics.registrations_per_iteration(),
        iterations: output.diagnostics.iterations.len(),
        converged: output.diagnostics.converged,
        ..Default::default()
    };
    if let Some(path) = &a.truth_config {
        let sim = SimConfig::load(path)?;
        let truth = sim.trajectory.trajectory()?;
        let est = traj.cast::<f64>();
        metrics.corner_rmse_px = Some(trajectory_rmse(&est, &truth, cube.width(), cube.height())?);
        let scene = load_panorama(&sim.panorama_path)?;
        let to_scene = scene_from_global(&est, &truth, est.first_time().max(truth.first_time()))?;
        let origin = (canvas.origin.0.as_f64(), canvas.origin.1.as_f64());
        let reference = reference_on_canvas(&scene, sim.flux_at_white, &to_scene, flux.width, flux.height, origin, a.scale);
        metrics.psnr_db = Some(psnr(&flux.cast::<f64>(), &reference, sim.flux_at_white)?);
    }
    metrics.wall_time_s = start.elapsed().as_secs_f64();
    std::fs::write(a.out.join("metrics.txt"), metrics.to_text())?;
    info!("reconstruction written to {}", a.out.display());
    print!("{}", metrics.to_text());
    Ok(())
}

fn diagnostics_text<T: Real>(d: &Diagnostics<T>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "converged = {}", d.converged);
    for it in &d.iterations {
        let _ = writeln!(
            s,
            "iteration {} scale {} groups {} registrations {} flagged {} knots {} max_knot_change {:.4}",
            it.iteration,
            it.scale.as_f64(),
            it.groups.len(),
            it.registrations,
            it.flagged,
            it.knot_count,
            it.max_knot_change.as_f64()
        );
        for g in &it.groups {
            let res = g.residual.map_or("none".to_string(), |r| format!("{:.6}", r.as_f64()));
            let _ = writeln!(
                s,
                "  group start {} length {} ref {} residual {}{}",
                g.group.start,
                g.group.length,
                g.group.reference,
                res,
                if g.flagged { " flagged" } else { "" }
            );
        }
    }
    for w in &d.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let est = Trajectory::<f64>::load_csv(&a.estimate)?;
    let truth = Trajectory::<f64>::load_csv(&a.truth)?;
    let (w, h) = a.fov;
    let mut metrics = Metrics {
        corner_rmse_px: Some(trajectory_rmse(&est, &truth, w, h)?),
        ..Default::default()
    };
    if let Some(pano) = &a.panorama {
        let Some(cfg_path) = &a.truth_config else {
            return Err(Error::Argument("--panorama needs --truth-config".into()));
        };
        let sim = SimConfig::load(cfg_path)?;
        let flux = read_flux(pano)?.cast::<f64>();
        let n = a.frames.unwrap_or(est.last_time().round() as usize + 1);
        let (cw, ch, origin) = canvas_bounds(&est, w, h, a.scale, n)?;
        if (cw, ch) != (flux.width, flux.height) {
            return Err(Error::Evaluation(format!(
                "panorama is {}x{} but the trajectory implies a {cw}x{ch} canvas",
                flux.width, flux.height
            )));
        }
        let scene = load_panorama(&sim.panorama_path)?;
        let to_scene = scene_from_global(&est, &truth, est.first_time().max(truth.first_time()))?;
        let reference = reference_on_canvas(&scene, sim.flux_at_white, &to_scene, cw, ch, origin, a.scale);
        metrics.psnr_db = Some(psnr(&flux, &reference, sim.flux_at_white)?);
        metrics.coverage_fraction = flux.coverage();
    }
    let text = metrics.to_text();
    if let Some(out) = &a.out {
        std::fs::write(out, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn cube_info(path: &Path) -> Result<()> {
    let mut f = std::fs::File::open(path)?;
    let header = read_header(&mut f)?;
    let size = f.metadata()?.len();
    println!("version = {}", header.version);
    println!("width = {}", header.width);
    println!("height = {}", header.height);
    println!("num_frames = {}", header.num_frames);
    println!("tau = {:?}", header.tau);
    println!("data_bytes = {}", header.data_len());
    println!("file_bytes = {size}");
    Ok(())
}

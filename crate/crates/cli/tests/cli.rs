use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use photonpano::metrics::Metrics;
use photonpano::scene::{dead_leaves, save_panorama};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_photonpano"));
    c.env_remove("PHOTONPANO_THREADS").env_remove("RUST_LOG");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes a scene and a short panning config into `dir`.
fn scenario(dir: &Path) -> PathBuf {
    save_panorama(&dead_leaves(260, 140, 5, 2.0, 25.0, 0.05, 1.0), dir.join("scene.png")).unwrap();
    let cfg = dir.join("sim.cfg");
    std::fs::write(
        &cfg,
        "# short pan\n\
         panorama_path = scene.png\n\
         fov_width = 80\n\
         fov_height = 80\n\
         num_frames = 2048\n\
         tau = 1\n\
         flux_at_white = 1\n\
         seed = 3\n\
         trajectory_kind = linear_pan\n\
         trajectory = 0 0 0 0 0 20 30 0 0; 2047 0 0 0 0 150 36 0 0\n\
         rgb_exposure_frames = 512\n\
         read_noise_sigma = 2\n",
    )
    .unwrap();
    cfg
}

fn simulate(dir: &Path, cfg: &Path, threads: Option<&str>) -> PathBuf {
    let out = dir.join("sim");
    let mut cmd = bin();
    cmd.arg("simulate").arg(cfg).arg("--out").arg(&out);
    if let Some(t) = threads {
        cmd.env("PHOTONPANO_THREADS", t);
    }
    let o = run(&mut cmd);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn reconstruct(cube: &Path, out: &Path, extra: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = bin();
    cmd.arg("reconstruct")
        .arg(cube)
        .args(["--group-size", "256", "--iterations", "3"])
        .arg("--out")
        .arg(out)
        .args(extra);
    if let Some(t) = threads {
        cmd.env("PHOTONPANO_THREADS", t);
    }
    run(&mut cmd)
}

#[test]
fn simulate_reconstruct_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    let sim = simulate(dir.path(), &cfg, None);
    assert!(sim.join("cube.pcube").is_file());
    assert!(sim.join("truth.csv").is_file());
    assert!(sim.join("rgb/frame_00003.png").is_file());
    assert!(!sim.join("rgb/frame_00004.png").exists());

    let info = run(bin().arg("info").arg(sim.join("cube.pcube")));
    assert!(info.status.success());
    let text = stdout(&info);
    for line in ["width = 80", "height = 80", "num_frames = 2048", "tau = 1.0"] {
        assert!(text.lines().any(|l| l == line), "{text}");
    }

    let rec = dir.path().join("rec");
    let o = reconstruct(&sim.join("cube.pcube"), &rec, &["--truth-config", cfg.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trajectory.csv", "panorama.png", "panorama16.png", "mask.pgm", "panorama.flux", "diagnostics.txt"] {
        assert!(rec.join(f).is_file(), "{f}");
    }
    let printed = Metrics::parse(&stdout(&o)).unwrap();
    let saved = Metrics::parse(&std::fs::read_to_string(rec.join("metrics.txt")).unwrap()).unwrap();
    assert_eq!(printed, saved);
    let rmse = saved.corner_rmse_px.unwrap();
    assert!(rmse < 1.0, "{rmse}");
    assert!(saved.psnr_db.unwrap() > 20.0, "{:?}", saved.psnr_db);
    assert!(saved.registrations_per_iteration.iter().all(|&r| r <= 2 * (2048 / 256) + 1));

    let eval = run(bin()
        .arg("evaluate")
        .arg(rec.join("trajectory.csv"))
        .arg(sim.join("truth.csv"))
        .args(["--fov", "80x80", "--frames", "2048"])
        .arg("--panorama")
        .arg(rec.join("panorama.flux"))
        .arg("--truth-config")
        .arg(&cfg));
    assert!(eval.status.success(), "{}", stderr(&eval));
    let m = Metrics::parse(&stdout(&eval)).unwrap();
    assert!((m.corner_rmse_px.unwrap() - rmse).abs() < 1e-9);
    // the dump is single precision
    assert!((m.psnr_db.unwrap() - saved.psnr_db.unwrap()).abs() < 0.01);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    let mut results = Vec::new();
    for threads in ["1", "8"] {
        let sub = dir.path().join(format!("t{threads}"));
        std::fs::create_dir_all(&sub).unwrap();
        let sim = simulate(&sub, &cfg, Some(threads));
        let rec = sub.join("rec");
        let o = reconstruct(&sim.join("cube.pcube"), &rec, &[], Some(threads));
        assert!(o.status.success(), "{}", stderr(&o));
        let mut metrics = Metrics::parse(&std::fs::read_to_string(rec.join("metrics.txt")).unwrap()).unwrap();
        metrics.wall_time_s = 0.0;
        let read = |p: PathBuf| std::fs::read(p).unwrap();
        results.push((
            read(sim.join("cube.pcube")),
            read(rec.join("trajectory.csv")),
            read(rec.join("panorama.flux")),
            metrics,
        ));
    }
    assert!(results[0] == results[1]);
}

#[test]
fn errors_carry_a_class_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();

    let o = run(bin().arg("reconstruct"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]"), "{}", stderr(&o));

    let o = run(bin().arg("info").arg(dir.path().join("missing.pcube")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[io]"), "{}", stderr(&o));

    let junk = dir.path().join("junk.pcube");
    std::fs::write(&junk, b"definitely not a photon cube, just text").unwrap();
    let o = run(bin().arg("info").arg(&junk));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[format]"), "{}", stderr(&o));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "panorama_path = x.png\nfov_width = 8\nfov_width = 9\n").unwrap();
    let o = run(bin().arg("simulate").arg(&bad).arg("--out").arg(dir.path().join("o")));
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.starts_with("error[config]") && e.contains("line 3"), "{e}");

    let cfg = scenario(dir.path());
    let sim = simulate(dir.path(), &cfg, None);
    let o = run(bin()
        .arg("reconstruct")
        .arg(sim.join("cube.pcube"))
        .args(["--group-size", "1", "--out"])
        .arg(dir.path().join("r")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[argument]"), "{}", stderr(&o));

    let o = run(bin()
        .arg("simulate")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("t"))
        .env("PHOTONPANO_THREADS", "many"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[argument]"), "{}", stderr(&o));
}

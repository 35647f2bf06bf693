mod common;

use photonpano::image::mle_flux;
use photonpano::registration::{corner_displacement, corner_displacement_h, register, RegistrationOptions};
use photonpano::simulator::simulate_with_scene;
use photonpano::warp::{apply_warp, Homography, WarpParams};

use common::{as_image, sim_config, static_at, texture, Lcg};

fn random_warp(rng: &mut Lcg, size: f64) -> WarpParams<f64> {
    let c = size;
    WarpParams([
        rng.range(-0.02, 0.02),
        rng.range(-0.02, 0.02),
        rng.range(-0.02, 0.02),
        rng.range(-0.02, 0.02),
        rng.range(-4.0, 4.0),
        rng.range(-4.0, 4.0),
        rng.range(-0.02, 0.02) / c,
        rng.range(-0.02, 0.02) / c,
    ])
}

#[test]
fn self_registration_stays_put() {
    let img = texture(128, 128, 21);
    let opts = RegistrationOptions::default();
    for init in [WarpParams::zero(), WarpParams::translation(0.3, -0.2)] {
        let r = register(&img, &img, &init, &opts).unwrap();
        assert!(r.converged);
        let d = corner_displacement(&r.warp, &WarpParams::zero(), 128, 128).unwrap();
        assert!(d < 0.05, "{d}");
    }
}

#[test]
fn forward_and_backward_registrations_cancel() {
    let mut rng = Lcg(5);
    let opts = RegistrationOptions::default();
    for trial in 0..6 {
        let scene = texture(160, 160, 40 + trial);
        let h = Homography::from_params(&random_warp(&mut rng, 128.0)).unwrap();
        let a = as_image(apply_warp(&scene, &Homography::identity(), 128, 128, (16.0, 16.0)).unwrap());
        let b = as_image(apply_warp(&scene, &h, 128, 128, (16.0, 16.0)).unwrap());
        let ab = register(&a, &b, &WarpParams::zero(), &opts).unwrap();
        let ba = register(&b, &a, &WarpParams::zero(), &opts).unwrap();
        let hab = Homography::from_params(&ab.warp).unwrap();
        let hba = Homography::from_params(&ba.warp).unwrap();
        let round = hab.compose(&hba).unwrap();
        let d = corner_displacement_h(&round, &Homography::identity(), 128, 128);
        assert!(d < 0.3, "trial {trial}: {d}");
    }
}

#[test]
fn accuracy_improves_with_merged_frame_count() {
    let scene = texture(140, 140, 3);
    let shift = (3.4, -2.6);
    let truth = WarpParams::translation(shift.0, shift.1);
    let opts = RegistrationOptions::default();
    let mut rmse = Vec::new();
    for m in [100usize, 400, 1600] {
        let mut ss = 0.0;
        let trials = 4;
        for s in 0..trials {
            let fixed_cfg = sim_config(m, (96, 96), 0.05, static_at(m, 20.0, 20.0), 10 * s + 1);
            let moving_cfg = sim_config(m, (96, 96), 0.05, static_at(m, 20.0 + shift.0, 20.0 + shift.1), 10 * s + 2);
            let merge = |cfg| {
                let (cube, _) = simulate_with_scene(&scene, &cfg).unwrap();
                let idx: Vec<usize> = (0..m).collect();
                mle_flux(&cube.mean_frame::<f64>(&idx).unwrap(), 1.0, m).unwrap()
            };
            let fixed = merge(fixed_cfg);
            let moving = merge(moving_cfg);
            // fixed(x) = scene(x + o), moving(x) = scene(x + o + shift), so
            // fixed(x) = moving(x - shift)
            let r = register(&moving, &fixed, &WarpParams::zero(), &opts).unwrap();
            let want = WarpParams::translation(-truth.0[4], -truth.0[5]);
            let d = corner_displacement(&r.warp, &want, 96, 96).unwrap();
            ss += d * d;
        }
        rmse.push((ss / trials as f64).sqrt());
    }
    assert!(rmse[0] > rmse[1] && rmse[1] > rmse[2], "{rmse:?}");
}

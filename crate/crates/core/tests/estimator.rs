mod common;

use photonpano::cube::PhotonCube;
use photonpano::image::{detection_probability, flux_from_fraction, mle_flux, LinearImage};
use photonpano::simulator::simulate_with_scene;
use proptest::prelude::*;

use common::{sim_config, static_at};

proptest! {
    #[test]
    fn mle_inverts_expected_fraction(phi_tau in 1e-4f64..=5.0, tau in 0.1f64..10.0) {
        let phi = phi_tau / tau;
        let p = detection_probability(phi, tau);
        let (est, sat) = flux_from_fraction(p, tau, 1e9);
        prop_assert!(!sat);
        prop_assert!(((est - phi) / phi).abs() < 1e-12, "phi {phi} est {est}");
    }

    #[test]
    fn mle_is_monotone(a in 0.0f64..0.999, b in 0.0f64..0.999) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (fl, _) = flux_from_fraction(lo, 1.0, 1e4);
        let (fh, _) = flux_from_fraction(hi, 1.0, 1e4);
        prop_assert!(fl <= fh);
    }

    #[test]
    fn cube_format_round_trip(w in 1usize..20, h in 1usize..6, n in 1usize..6, seed in any::<u64>(), tau in 1e-6f64..1.0) {
        let mut s = seed | 1;
        let frames: Vec<Vec<u8>> = (0..n)
            .map(|_| {
                (0..w * h)
                    .map(|_| {
                        s ^= s << 13;
                        s ^= s >> 7;
                        s ^= s << 17;
                        (s & 1) as u8
                    })
                    .collect()
            })
            .collect();
        let cube = PhotonCube::from_frames(w, h, tau, frames.iter().map(|f| f.as_slice())).unwrap();
        let mut bytes = Vec::new();
        cube.write_to(&mut bytes).unwrap();
        let back = PhotonCube::read_from(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &cube);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(again, bytes);
        for (t, f) in frames.iter().enumerate() {
            prop_assert_eq!(&back.frame(t).unpack(), f);
        }
    }
}

fn constant_cube(n: usize, size: usize, phi_tau: f64, seed: u64) -> PhotonCube {
    let scene = LinearImage::constant(size + 4, size + 4, 1.0);
    let cfg = sim_config(n, (size, size), phi_tau, static_at(n, 2.0, 2.0), seed);
    simulate_with_scene(&scene, &cfg).unwrap().0
}

/// Standard normal upper tail via the complementary error function
/// (Abramowitz and Stegun 7.1.26, absolute error below 1.5e-7).
fn normal_two_sided_tail(z: f64) -> f64 {
    let x = z.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    poly * (-x * x).exp()
}

#[test]
fn mean_fraction_matches_bernoulli_probability() {
    let cube = constant_cube(1000, 16, std::f64::consts::LN_2, 3);
    let idx: Vec<usize> = (0..1000).collect();
    let mean = cube.mean_frame::<f64>(&idx).unwrap();
    // 3 sigma of a Bernoulli(0.5) mean over 1000 draws is 0.047
    for v in &mean.values {
        assert!((v - 0.5).abs() < 0.05, "{v}");
    }
}

#[test]
fn monte_carlo_error_matches_delta_method() {
    let (n, size, phi_tau) = (10_000usize, 32usize, 0.5);
    let cube = constant_cube(n, size, phi_tau, 17);
    let idx: Vec<usize> = (0..n).collect();
    let flux = mle_flux(&cube.mean_frame::<f64>(&idx).unwrap(), 1.0, n).unwrap();

    let p = detection_probability(phi_tau, 1.0);
    let sigma = (p / ((1.0 - p) * n as f64)).sqrt();
    let errs: Vec<f64> = flux.values.iter().map(|v| (v - phi_tau) / sigma).collect();

    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64;
    assert!(mean.abs() < 0.15, "standardized bias {mean}");
    assert!((var - 1.0).abs() < 0.15, "standardized variance {var}");
    assert!(errs.iter().filter(|e| e.abs() > 4.5).count() <= 3);

    // the share of pixels outside a 2% band follows the Gaussian tail
    let z = 0.02 * phi_tau / sigma;
    let expected = normal_two_sided_tail(z) * errs.len() as f64;
    let observed = errs.iter().filter(|e| e.abs() > z).count() as f64;
    let spread = (expected * (1.0 - expected / errs.len() as f64)).sqrt();
    assert!((observed - expected).abs() < 5.0 * spread, "observed {observed} expected {expected:.1}");
}

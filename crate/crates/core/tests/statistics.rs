use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stealthy_core::gaussian::{sample_field, GaussianSpec};
use stealthy_core::lattice::{forward_dft, LatticeArray, Space, TorusGeometry};
use stealthy_core::points::{generate_stealthy, perturbed_lattice, PointConfiguration};
use stealthy_core::stats::{
    anticoncentration_audit, check_zero_variance, empirical_variance, find_largest_hole, hole_bound,
    linear_statistic_points, variance_decay_fit, variance_of_linear_statistic,
};
use stealthy_core::structure::{GapRegion, StructureFunction};
use stealthy_core::testfn::{anticonc_phi, monomial_window, rigidity_phi, BumpPair};
use stealthy_core::Error;

fn pair(d: usize) -> Arc<BumpPair> {
    static PAIRS: OnceLock<Vec<Arc<BumpPair>>> = OnceLock::new();
    PAIRS.get_or_init(|| (1..=2).map(|d| Arc::new(BumpPair::build(d).unwrap())).collect())[d - 1].clone()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

#[test]
fn reference_constants_in_one_dimension() {
    let p = pair(1);
    assert!((p.a - 16.83187356906446).abs() < 1e-9);
    assert!((p.autocorr0 - 50.90260848158938).abs() < 1e-9);
    assert!((p.decay_constant - 77.81515486881489).abs() < 1e-8);
    let bound = hole_bound(1.0, &p).unwrap();
    assert!((bound.kappa - 16.83187356906446).abs() < 1e-9);
    assert_eq!(bound.r_cubes, 1);
}

#[test]
fn bump_matches_independent_quadrature() {
    let p = pair(1);
    let r = 1.0 / 3.0;
    let psi0 = simpson(|k| p.psi_hat(k), -r, r, 200_000) / (2.0 * PI);
    assert!((p.psi(&[0.0]) - psi0).abs() <= 1e-8, "{} vs {psi0}", p.psi(&[0.0]));
    let l2 = simpson(|k| p.psi_hat(k).powi(2), -r, r, 200_000) / (2.0 * PI);
    assert!((p.autocorr0 - l2).abs() <= 1e-8 * l2);
    assert!((p.autocorr(0.0) - l2).abs() <= 1e-8 * l2);
    for i in 0..1000 {
        let k = r + i as f64 * 1e-3;
        assert_eq!(p.psi_hat(k), 0.0);
        assert_eq!(p.psi_hat(-k), 0.0);
    }
    // psi >= 1 on the cube of side a
    let edge = p.psi(&[p.a / 2.0]);
    assert!((1.0..1.0 + 1e-8).contains(&edge), "{edge}");
    assert!(p.psi(&[0.4 * p.a]) > 1.0);
}

#[test]
fn anticonc_phi_properties() {
    let p = pair(1);
    let phi1 = anticonc_phi(p.clone(), 1.0).unwrap();
    assert!((phi1.eval(&[0.0]).re - p.psi(&[0.0]).powi(2)).abs() < 1e-12);
    let b = 2.5;
    let phib = anticonc_phi(p.clone(), b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let x: f64 = rng.random_range(-30.0..30.0);
        let lhs = phib.eval(&[x]).re;
        let rhs = b * phi1.eval(&[b * x]).re;
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }
    for _ in 0..10_000 {
        assert!(phib.eval(&[rng.random_range(-100.0..100.0)]).re >= 0.0);
    }
    let side = p.a / b;
    for i in 0..=200 {
        let x = -side / 2.0 + side * i as f64 / 200.0;
        assert!(phib.eval(&[x]).re >= b * (1.0 - 1e-9));
    }
    assert!((phib.mass().unwrap().re - p.autocorr0).abs() < 1e-9 * p.autocorr0);
    let d2 = anticonc_phi(pair(2), 0.7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let x = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
        assert!(d2.eval(&x).re >= 0.0);
    }
}

fn dense_transform(values: &[f64], h: f64) -> Vec<Complex64> {
    let n = values.len();
    let g = TorusGeometry::new(1, n, n as f64 * h).unwrap();
    forward_dft(&LatticeArray::from_real(g, Space::Physical, values).unwrap())
        .unwrap()
        .values
        .into_iter()
        .map(|z| z * h)
        .collect()
}

#[test]
fn anticonc_transform_vanishes_off_band() {
    let phi = anticonc_phi(pair(1), 1.0).unwrap();
    let (n, h) = (16384, 0.0625);
    let g = TorusGeometry::new(1, n, n as f64 * h).unwrap();
    let samples: Vec<f64> = (0..n).map(|i| phi.eval(&g.centered_position(i)).re).collect();
    let f = dense_transform(&samples, h);
    let peak = f[0].norm();
    for (i, z) in f.iter().enumerate() {
        let k = g.wavenumber(i);
        if k > 2.0 / 3.0 {
            assert!(z.norm() <= 1e-10 * peak, "k={k}: {}", z.norm());
        }
        let exact = phi.fourier(&[g.wavevector(i)[0]]).unwrap();
        assert!((z - exact).norm() <= 1e-8 * peak);
    }
}

#[test]
fn rigidity_transform_is_the_triangle() {
    // beta L and mu L are multiples of pi, so the periodized sinc^2 is a Fejer kernel
    let l = 64.0;
    let n = 1024;
    let beta = PI * 8.0 / l;
    let mu = 2.0 * PI * 5.0 / l;
    let phi = rigidity_phi(vec![mu], vec![0.0], beta, None).unwrap();
    let g = TorusGeometry::new(1, n, l).unwrap();
    let c = beta / PI;
    let samples: Vec<Complex64> = (0..n)
        .map(|i| {
            let x = g.centered_position(i)[0];
            phi.character(&[x]) * c * periodized_sinc2(beta, x, l)
        })
        .collect();
    let h = l / n as f64;
    let f: Vec<Complex64> = forward_dft(&LatticeArray::new(g, Space::Physical, samples).unwrap())
        .unwrap()
        .values
        .into_iter()
        .map(|z| z * h)
        .collect();
    for (i, z) in f.iter().enumerate() {
        let k = g.wavevector(i)[0];
        let expected = phi.fourier(&[k]).unwrap();
        assert!((z - expected).norm() <= 1e-8, "k={k}: {z} vs {expected}");
        if (k - mu).abs() >= 2.0 * beta - 1e-9 {
            assert!(z.norm() <= 1e-8);
        }
    }
    assert!((phi.eval(&[0.0]).re - c).abs() < 1e-15);
    let pi_beta = rigidity_phi(vec![0.0], vec![0.0], PI, None).unwrap();
    assert!(pi_beta.eval(&[1.0]).norm() < 1e-30);
}

/// Image sum of `sinc^2(beta x)` over the period `l` when `beta l / pi = m` is an integer.
fn periodized_sinc2(beta: f64, x: f64, l: f64) -> f64 {
    let m = (beta * l / PI).round();
    let y = beta * x;
    if (y / m).sin().abs() < 1e-300 {
        return 1.0;
    }
    y.sin().powi(2) / (m * (y / m).sin()).powi(2)
}

#[test]
fn periodized_sinc_matches_image_sum() {
    let (beta, l) = (PI * 8.0 / 64.0, 64.0);
    for &x in &[0.3, 5.0, -17.2, 31.9] {
        let direct: f64 = (-200_000..=200_000)
            .map(|j| {
                let y = beta * (x + j as f64 * l);
                (y.sin() / y).powi(2)
            })
            .sum();
        assert!((direct - periodized_sinc2(beta, x, l)).abs() < 1e-6);
    }
}

#[test]
fn monomial_window_values() {
    let w = monomial_window(vec![2], 3.0, 1.0).unwrap();
    assert_eq!(w.eval(&[0.5]).re, 0.25);
    let flat = monomial_window(vec![0], 5.0, 1.0).unwrap();
    assert_eq!(flat.eval(&[4.9]).re, 1.0);
    assert_eq!(flat.eval(&[10.5]).re, 0.0);
    let lin = monomial_window(vec![1], 8.0, 1.0).unwrap();
    let base = monomial_window(vec![0], 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let x: f64 = rng.random_range(-20.0..20.0);
        assert!((lin.eval(&[x]).re - x * base.eval(&[x / 8.0]).re).abs() <= 1e-14 * (1.0 + x.abs()));
    }
}

#[test]
fn lattice_statistic_is_zero_mode() {
    let lattice = perturbed_lattice(1, 400, 400.0, 0.0, None, 0).unwrap();
    let phi = anticonc_phi(pair(1), 1.0).unwrap();
    let direct = linear_statistic_points(&phi, &lattice).unwrap();
    let p = pair(1);
    let mass = simpson(|k| p.psi_hat(k).powi(2), -1.0 / 3.0, 1.0 / 3.0, 200_000) / (2.0 * PI);
    assert!((direct.re - mass).abs() <= 1e-8 * mass, "{direct} vs {mass}");
    let zero = rigidity_phi(vec![0.0], vec![0.0], 0.1, None).unwrap();
    let empty = PointConfiguration::new(1, 10.0, &[]).unwrap();
    assert_eq!(linear_statistic_points(&zero, &empty).unwrap(), Complex64::new(0.0, 0.0));
}

fn stealthy_line() -> &'static PointConfiguration {
    static CFG: OnceLock<PointConfiguration> = OnceLock::new();
    CFG.get_or_init(|| {
        let gap = GapRegion::ball_for_points(1, 64.0, 0.5).unwrap();
        generate_stealthy(64, &gap, 21).unwrap()
    })
}

#[test]
fn certified_configuration_has_exact_statistic() {
    let cfg = stealthy_line();
    let phi = anticonc_phi(pair(1), 0.5).unwrap();
    let check = check_zero_variance(&phi, cfg).unwrap();
    assert!(check.pass);
    assert!(check.deviation <= 1e-8 * check.expected);
    let wide = anticonc_phi(pair(1), 1.0).unwrap();
    assert!(matches!(check_zero_variance(&wide, cfg), Err(Error::SupportViolation(_))));
    let plain = PointConfiguration::new(1, 64.0, &[vec![1.0]]).unwrap();
    assert!(matches!(check_zero_variance(&phi, &plain), Err(Error::CertificateMissing)));
}

#[test]
fn field_variances() {
    let g = TorusGeometry::new(1, 64, 64.0).unwrap();
    let s = StructureFunction::stealthy_flat(g, 0.5).unwrap();
    let inside = anticonc_phi(pair(1), 0.5).unwrap();
    assert_eq!(variance_of_linear_statistic(&inside, &s).unwrap(), 0.0);

    let generic = anticonc_phi(pair(1), 2.0).unwrap();
    let analytic = variance_of_linear_statistic(&generic, &s).unwrap();
    let fields = sample_field(&GaussianSpec::new(s, 13), 5000).unwrap();
    let empirical = empirical_variance(&generic, &fields).unwrap();
    assert!((empirical - analytic).abs() <= 0.1 * analytic, "{empirical} vs {analytic}");
}

#[test]
fn lattice_passes_audit() {
    let l = 64.0;
    let g = TorusGeometry::new(1, 64, l).unwrap();
    let all = GapRegion::explicit(g, (0..64).collect()).unwrap();
    let lattice = perturbed_lattice(1, 64, l, 0.0, None, 0).unwrap().certify(&all, 1e-20).unwrap();
    let b = PI;
    let audit = anticoncentration_audit(&lattice, b, &pair(1)).unwrap();
    let side = pair(1).a / b;
    assert!(audit.max_count as f64 <= side.ceil() + 1.0);
    assert!(audit.pass);

    let empty = PointConfiguration::new(1, l, &[]).unwrap().certify(&all, 1.0).unwrap();
    let e = anticoncentration_audit(&empty, b, &pair(1)).unwrap();
    assert_eq!((e.max_count, e.pass), (0, true));
    let bare = PointConfiguration::new(1, l, &[vec![1.0]]).unwrap();
    assert!(matches!(anticoncentration_audit(&bare, b, &pair(1)), Err(Error::CertificateMissing)));
}

fn brute_force_hole(xs: &[f64], l: f64) -> f64 {
    let mut best: f64 = 0.0;
    for (i, &a) in xs.iter().enumerate() {
        let mut nearest = l;
        for (j, &b) in xs.iter().enumerate() {
            if i != j {
                let gap = if b > a || (b == a && j > i) { b - a } else { b + l - a };
                nearest = nearest.min(gap);
            }
        }
        best = best.max(nearest);
    }
    0.5 * best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn line_holes_match_brute_force(xs in prop::collection::vec(0.0f64..50.0, 1..=100)) {
        let cfg = PointConfiguration::from_flat(1, 50.0, xs.clone()).unwrap();
        let hole = find_largest_hole(&cfg, 1).unwrap();
        prop_assert_eq!(hole.radius, brute_force_hole(cfg.coords(), 50.0));
        prop_assert!(!hole.approximate);
        prop_assert!(hole.verify(&cfg));
    }

    #[test]
    fn hole_bound_inverse_law(b in 0.01f64..50.0) {
        let p = pair(1);
        let one = hole_bound(1.0, &p).unwrap();
        let r = hole_bound(b, &p).unwrap();
        prop_assert!((r.r0 * b - one.r0).abs() <= 1e-12 * one.r0);
        let twice = hole_bound(2.0 * b, &p).unwrap();
        prop_assert!((twice.r0 - r.r0 / 2.0).abs() <= 1e-12 * r.r0);
    }

    #[test]
    fn audit_is_translation_robust(shift in -200.0f64..200.0) {
        let cfg = stealthy_line();
        let moved = cfg.translated(&[shift]).unwrap();
        let a = anticoncentration_audit(cfg, 0.5, &pair(1)).unwrap();
        let b = anticoncentration_audit(&moved, 0.5, &pair(1)).unwrap();
        prop_assert_eq!((a.max_count, a.pass), (b.max_count, b.pass));
    }
}

#[test]
fn hole_examples() {
    let cfg = PointConfiguration::new(1, 8.0, &[vec![0.0], vec![1.0], vec![2.0], vec![5.0]]).unwrap();
    let hole = find_largest_hole(&cfg, 1).unwrap();
    assert_eq!((hole.radius, hole.center[0]), (1.5, 6.5));
    let lattice = perturbed_lattice(1, 10, 10.0, 0.0, None, 0).unwrap();
    assert_eq!(find_largest_hole(&lattice, 1).unwrap().radius, 0.5);
    let empty = PointConfiguration::new(1, 8.0, &[]).unwrap();
    assert!(matches!(find_largest_hole(&empty, 1), Err(Error::EmptyConfiguration)));
}

#[test]
fn planar_hole_beats_any_checked_cube() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let l = 10.0;
    let coords: Vec<f64> = (0..128).map(|_| rng.random_range(0.0..l)).collect();
    let cfg = PointConfiguration::from_flat(2, l, coords).unwrap();
    let resolution = 4;
    let hole = find_largest_hole(&cfg, resolution).unwrap();
    assert!(hole.approximate && hole.verify(&cfg));
    let pitch = l / (8 * resolution) as f64;
    for _ in 0..2000 {
        let c = [rng.random_range(0.0..l), rng.random_range(0.0..l)];
        let empty_half_side = cfg
            .points()
            .map(|p| {
                p.iter()
                    .zip(&c)
                    .map(|(x, ca)| {
                        let d = (x - ca).rem_euclid(l);
                        d.min(l - d)
                    })
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(hole.radius >= empty_half_side - 0.5 * pitch);
    }
}

#[test]
fn decay_slopes() {
    let g = TorusGeometry::new(1, 512, 512.0).unwrap();
    let window = anticonc_phi(pair(1), 4.0).unwrap();
    let scales = [8.0, 16.0, 32.0, 64.0];
    let fast = variance_decay_fit(&StructureFunction::fast_decay(g, 1.0, 1.0).unwrap(), &window, &scales).unwrap();
    assert!(fast.slope.unwrap() <= -6.0, "{:?}", fast.slope);
    let control = variance_decay_fit(&StructureFunction::power_law(g, 2.0, 1.0).unwrap(), &window, &scales).unwrap();
    let slope = control.slope.unwrap();
    // an undilated-mass window against |k|^2 gives L^{d-2}
    assert!((slope + 1.0).abs() < 0.05, "{slope}");
    let gapped = variance_decay_fit(&StructureFunction::stealthy_flat(g, 0.5).unwrap(), &window, &scales).unwrap();
    assert!(gapped.degenerate);
    assert!(matches!(
        variance_decay_fit(&StructureFunction::stealthy_flat(g, 0.5).unwrap(), &window, &[8.0, 256.0]),
        Err(Error::InsufficientScales { .. })
    ));
}

#[test]
fn rigidity_phi_checks_gap() {
    let g = TorusGeometry::new(1, 64, 64.0).unwrap();
    let gap = GapRegion::ball(g, 1.0).unwrap();
    assert!(rigidity_phi(vec![0.0], vec![0.2], 0.1, Some(&gap)).is_ok());
    assert!(matches!(
        rigidity_phi(vec![0.0], vec![0.95], 0.1, Some(&gap)),
        Err(Error::SupportViolation(_))
    ));
}

use num_complex::Complex64;
use proptest::prelude::*;
use stealthy_core::gaussian::{sample_one, FieldRealization, GaussianSpec};
use stealthy_core::lattice::TorusGeometry;
use stealthy_core::points::{PointConfiguration, StealthCertificate, StealthyGenerator};
use stealthy_core::rigidity::*;
use stealthy_core::structure::{Family, GapRegion, StructureFunction};
use stealthy_core::Error;

fn small_field() -> (FieldRealization, GapRegion) {
    let g = TorusGeometry::new(1, 8, 8.0).unwrap();
    let gap = GapRegion::explicit(g, vec![7, 0, 1]).unwrap();
    let values: Vec<f64> = (0..8).map(|i| if gap.contains(i) { 0.0 } else { 1.0 }).collect();
    let s = StructureFunction::with_gap(g, Family::Explicit, values, gap.clone()).unwrap();
    (sample_one(&GaussianSpec::new(s, 11), 0).unwrap(), gap)
}

#[test]
fn field_inside_three_sites() {
    let (field, gap) = small_field();
    let rec = reconstruct_field_inside(&field, &gap, &WindowSplit::new(vec![0, 1, 2])).unwrap();
    for (site, v) in rec.inside.iter().zip(&rec.values) {
        assert!((v - field.values[*site]).abs() <= 1e-8, "{site}: {v} vs {}", field.values[*site]);
    }
    assert!(rec.residual < 1e-10);
}

#[test]
fn field_inside_too_large_is_rank_deficient() {
    let (field, gap) = small_field();
    let err = reconstruct_field_inside(&field, &gap, &WindowSplit::new(vec![0, 1, 2, 3])).unwrap_err();
    assert!(matches!(err, Error::RankDeficient { unknowns: 4, constraints: 3, .. }), "{err:?}");
}

#[test]
fn field_reconstruction_reads_only_outside() {
    let (field, gap) = small_field();
    let split = WindowSplit::new(vec![2, 3]);
    let mut other = field.clone();
    other.values[2] = 100.0;
    other.values[3] = -7.5;
    let a = reconstruct_field_inside(&field, &gap, &split).unwrap();
    let b = reconstruct_field_inside(&other, &gap, &split).unwrap();
    assert_eq!(a.values, b.values);
}

#[test]
fn field_reconstruction_empty_inside() {
    let (field, gap) = small_field();
    let rec = reconstruct_field_inside(&field, &gap, &WindowSplit::new(vec![])).unwrap();
    assert!(rec.values.is_empty());
    assert_eq!(rec.residual, 0.0);
}

fn window(t: f64, s: f64, sigma: f64) -> f64 {
    let z = sigma * std::f64::consts::SQRT_2;
    0.5 * (statrs::function::erf::erf((s - t) / z) + statrs::function::erf::erf((s + t) / z))
}

#[test]
fn empty_outside_gives_mass_term() {
    // with nothing outside the answer is rho times the integral of the test function
    let l = 400.0;
    let gap = GapRegion::ball_for_points(1, l, 1.2).unwrap();
    let cert = StealthCertificate {
        gap,
        energy: 0.0,
        tolerance: 0.0,
        gap_radius: Some(1.2),
        iterations: 0,
        restarts: 0,
    };
    let outside = PointConfiguration::new(1, l, &[]).unwrap();
    let rho = 0.01;
    let thetas = vec![vec![0.0], vec![0.3]];
    let ecf = ecf_from_outside(
        &outside,
        rho,
        &BallSplit { center: vec![0.0], radius: 1.0 },
        &cert,
        &[0.0],
        &thetas,
        &EcfOptions::default(),
    )
    .unwrap();
    let beta = ecf.beta0;
    for (t, f) in thetas.iter().zip(&ecf.fixed_beta) {
        // trapezoid on a fine grid; the integrand is smooth and decays like a Gaussian
        let h = 0.005;
        let reach = ecf.plateau + 12.0 * ecf.sigma;
        let m = (reach / h) as i64;
        let integral: Complex64 = (-m..=m)
            .map(|i| {
                let y = i as f64 * h;
                let sinc = if y == 0.0 { 1.0 } else { (beta * y).sin() / (beta * y) };
                Complex64::from_polar(sinc * sinc * window(y, ecf.plateau, ecf.sigma) * h, t[0] * y)
            })
            .sum();
        let expected = rho * integral;
        assert!((f - expected).norm() < 1e-9 * expected.norm().max(1.0), "{f} vs {expected}");
    }
}

fn planted(inside: &[f64], l: f64, seed: u64) -> PointConfiguration {
    let gap = GapRegion::ball_for_points(1, l, 1.2).unwrap();
    let pts: Vec<Vec<f64>> = inside.iter().map(|&x| vec![x.rem_euclid(l)]).collect();
    StealthyGenerator::new(l as usize, gap)
        .pinned(pts)
        .exclusion(vec![0.0], 1.05)
        .generate(seed)
        .unwrap()
}

#[test]
fn planted_pair_within_error_bars() {
    let l = 440.0;
    let cfg = planted(&[-0.5, 0.7], l, 5);
    let cert = cfg.certificate().unwrap().clone();
    let (ins, out) = cfg.split_ball(&[0.0], 1.0);
    assert_eq!(ins.len(), 2);
    let outside = PointConfiguration::new(1, l, &out).unwrap();
    let thetas: Vec<Vec<f64>> = (0..13).map(|m| vec![m as f64 * 0.05]).collect();
    let split = BallSplit { center: vec![0.0], radius: 1.0 };
    let ecf = ecf_from_outside(&outside, cfg.density(), &split, &cert, &[0.0], &thetas, &EcfOptions::default())
        .unwrap();
    assert_eq!(ecf.count_estimate(), Some(2));
    let truth = |t: f64| Complex64::from_polar(1.0, -0.5 * t) + Complex64::from_polar(1.0, 0.7 * t);
    for (i, t) in thetas.iter().enumerate() {
        let err = (ecf.values[i] - truth(t[0])).norm();
        assert!(err <= ecf.error_bars[i], "theta {}: {err:e} > {:e}", t[0], ecf.error_bars[i]);
        assert!(ecf.error_bars[i] < 1e-6);
    }

    // fixed-beta values carry an O(beta^2) bias that the extrapolation removes
    let t = thetas.len() - 1;
    let fixed = (ecf.fixed_beta[t] - truth(thetas[t][0])).norm();
    let half = ecf_from_outside(
        &outside,
        cfg.density(),
        &split,
        &cert,
        &[0.0],
        &thetas[t..],
        &EcfOptions { beta0: ecf.beta0 / 2.0, ..Default::default() },
    )
    .unwrap();
    let fixed_half = (half.fixed_beta[0] - truth(thetas[t][0])).norm();
    let ratio = fixed / fixed_half;
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    assert!(fixed > 1e3 * ecf.error_bars[t]);

    let rec = invert_ecf_to_points(&ecf, 2, None).unwrap();
    assert!((rec.positions[0][0] + 0.5).abs() < 1e-6);
    assert!((rec.positions[1][0] - 0.7).abs() < 1e-6);
}

#[test]
fn leaking_support_is_rejected() {
    let l = 440.0;
    let gap = GapRegion::ball_for_points(1, l, 1.2).unwrap();
    let cert = StealthCertificate { gap, energy: 0.0, tolerance: 0.0, gap_radius: Some(1.2), iterations: 0, restarts: 0 };
    let outside = PointConfiguration::new(1, l, &[]).unwrap();
    let err = ecf_from_outside(
        &outside,
        1.0,
        &BallSplit { center: vec![0.0], radius: 1.0 },
        &cert,
        &[0.0],
        &[vec![1.5]],
        &EcfOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::SupportViolation(_)), "{err:?}");
}

fn exact_samples(points: &[f64], step: f64, count: usize) -> EcfSamples {
    let thetas: Vec<Vec<f64>> = (0..count).map(|m| vec![m as f64 * step]).collect();
    let values = thetas
        .iter()
        .map(|t| points.iter().map(|x| Complex64::from_polar(1.0, t[0] * x)).sum())
        .collect();
    EcfSamples {
        d: 1,
        center: vec![0.0],
        radius: 3.0,
        mu: vec![0.0],
        thetas,
        values,
        fixed_beta: Vec::new(),
        error_bars: vec![0.0; count],
        leak: Vec::new(),
        extrapolation: Vec::new(),
        sigma: 1.0,
        plateau: 3.0,
        beta0: 0.05,
    }
}

#[test]
fn single_point_inversion() {
    let rec = invert_ecf_to_points(&exact_samples(&[0.25], 0.1, 16), 1, None).unwrap();
    assert!((rec.positions[0][0] - 0.25).abs() < 1e-10);
}

#[test]
fn three_point_inversion() {
    let rec = invert_ecf_to_points(&exact_samples(&[-1.2, 0.3, 2.0], 0.05, 64), 3, None).unwrap();
    for (p, t) in rec.positions.iter().zip([-1.2, 0.3, 2.0]) {
        assert!((p[0] - t).abs() < 1e-8, "{p:?} vs {t}");
    }
}

#[test]
fn coincident_points_are_flagged() {
    match invert_ecf_to_points(&exact_samples(&[0.1, 0.1 + 1e-9], 0.05, 64), 2, None) {
        Ok(rec) => assert!(rec.warnings.iter().any(|w| w.starts_with("ill-posed")), "{rec:?}"),
        Err(e) => assert!(matches!(e, Error::InversionFailure { .. })),
    }
}

#[test]
fn two_dimensional_inversion() {
    let pts = [[0.4, -0.3], [-0.5, 0.6]];
    let mut thetas = Vec::new();
    for i in -6..=6 {
        for j in -6..=6 {
            thetas.push(vec![i as f64 * 0.25, j as f64 * 0.25]);
        }
    }
    let values = thetas
        .iter()
        .map(|t| pts.iter().map(|x| Complex64::from_polar(1.0, t[0] * x[0] + t[1] * x[1])).sum())
        .collect();
    let n = thetas.len();
    let ecf = EcfSamples {
        d: 2,
        center: vec![1.0, 1.0],
        radius: 1.0,
        mu: vec![0.0, 0.0],
        thetas,
        values,
        fixed_beta: Vec::new(),
        error_bars: vec![0.0; n],
        leak: Vec::new(),
        extrapolation: Vec::new(),
        sigma: 1.0,
        plateau: 1.0,
        beta0: 0.05,
    };
    let rec = invert_ecf_to_points(&ecf, 2, None).unwrap();
    assert!((rec.positions[0][0] - 0.5).abs() < 1e-8 && (rec.positions[0][1] - 1.6).abs() < 1e-8, "{rec:?}");
    assert!((rec.positions[1][0] - 1.4).abs() < 1e-8 && (rec.positions[1][1] - 0.7).abs() < 1e-8);
}

#[test]
fn zero_field_has_zero_moments() {
    let g = TorusGeometry::new(1, 256, 256.0).unwrap();
    let zero = FieldRealization { geometry: g, seed: 0, index: 0, values: vec![0.0; 256] };
    let est = recover_inside_moments(&[zero], 4.0, &[vec![0], vec![2]], &[2.0, 4.0]).unwrap();
    assert_eq!(est.len(), 4);
    for e in est {
        assert_eq!(e.estimates, vec![0.0]);
        assert_eq!(e.median_error, 0.0);
    }
}

#[test]
fn moment_scale_beyond_quarter_box_rejected() {
    let g = TorusGeometry::new(1, 64, 64.0).unwrap();
    let zero = FieldRealization { geometry: g, seed: 0, index: 0, values: vec![0.0; 64] };
    let err = recover_inside_moments(&[zero], 1.0, &[vec![1]], &[20.0]).unwrap_err();
    assert!(matches!(err, Error::Resolution(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn inversion_round_trip(raw in prop::collection::vec(-2.0f64..2.0, 1..=8)) {
        let mut pts = raw.clone();
        pts.sort_by(f64::total_cmp);
        prop_assume!(pts.windows(2).all(|w| w[1] - w[0] > 0.3));
        let rec = invert_ecf_to_points(&exact_samples(&pts, 0.05, 64), pts.len(), None).unwrap();
        for (p, t) in rec.positions.iter().zip(&pts) {
            prop_assert!((p[0] - t).abs() < 1e-6, "{:?} vs {:?}", rec.positions, pts);
        }
    }
}

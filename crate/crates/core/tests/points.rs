use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stealthy_core::points::{
    collective_coordinate, collective_energy, energy_and_gradient, generate_stealthy, perturbed_lattice,
    structure_factor, PointConfiguration,
};
use stealthy_core::structure::GapRegion;
use stealthy_core::Error;

fn uniform(d: usize, n: usize, l: f64, seed: u64) -> PointConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n * d).map(|_| rng.random_range(0.0..l)).collect();
    PointConfiguration::from_flat(d, l, coords).unwrap()
}

fn line_modes(l: f64, js: impl IntoIterator<Item = i64>) -> Vec<Vec<f64>> {
    js.into_iter().map(|j| vec![2.0 * PI * j as f64 / l]).collect()
}

#[test]
fn ideal_gas_structure_factor_is_one() {
    let modes = line_modes(256.0, 1..=40);
    let mut total = 0.0;
    for seed in 0..200 {
        let s = structure_factor(&uniform(1, 256, 256.0, seed), &modes).unwrap();
        total += s.iter().sum::<f64>() / s.len() as f64;
    }
    let mean = total / 200.0;
    assert!((mean - 1.0).abs() <= 0.1, "{mean}");
}

#[test]
fn generated_configuration_is_stealthy() {
    let n = 32;
    let gap = GapRegion::ball_for_points(1, 32.0, 0.5).unwrap();
    let cfg = generate_stealthy(n, &gap, 3).unwrap();
    let cert = cfg.certificate().unwrap();
    assert!(cert.energy <= 1e-12 * (n * n) as f64);
    assert_eq!(cert.gap_radius.map(|b| b >= 0.5), Some(true));
    let g = gap.geometry();
    let modes: Vec<Vec<f64>> = gap.modes().filter(|&i| i != 0).map(|i| g.wavevector(i)).collect();
    assert!(!modes.is_empty());
    for s in structure_factor(&cfg, &modes).unwrap() {
        assert!(s <= 1e-12);
    }
    assert_eq!(cfg, generate_stealthy(n, &gap, 3).unwrap());
}

#[test]
fn two_dimensional_generation() {
    let gap = GapRegion::ball_for_points(2, 8.0, 1.2).unwrap();
    let cfg = generate_stealthy(40, &gap, 9).unwrap();
    assert!(collective_energy(&cfg, &gap).unwrap() <= 1e-12 * 1600.0);
}

#[test]
fn too_many_constraints_are_refused() {
    let gap = GapRegion::ball_for_points(1, 8.0, 3.0).unwrap();
    assert!(matches!(generate_stealthy(2, &gap, 0), Err(Error::Precondition(_))));
}

#[test]
fn lattice_and_its_perturbation() {
    let gap = GapRegion::ball_for_points(1, 32.0, 0.5).unwrap();
    let exact = perturbed_lattice(1, 32, 32.0, 0.0, Some(&gap), 0).unwrap();
    assert!(collective_energy(&exact, &gap).unwrap() < 1e-24);
    assert!(exact.certificate().is_some());

    let jittered = perturbed_lattice(1, 32, 32.0, 0.3, Some(&gap), 5).unwrap();
    assert!(jittered.certificate().is_none());
    let g = gap.geometry();
    let modes: Vec<Vec<f64>> = gap.modes().filter(|&i| i != 0).map(|i| g.wavevector(i)).collect();
    let s = structure_factor(&jittered, &modes).unwrap();
    assert!(s.iter().all(|&v| v > 0.0));
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean > 0.0 && mean < 1.0);

    let wild = perturbed_lattice(2, 5, 5.0, 40.0, None, 1).unwrap();
    assert!(wild.coords().iter().all(|&x| (0.0..5.0).contains(&x)));
}

#[test]
fn collective_coordinates_at_origin_and_mirror() {
    let cfg = uniform(2, 17, 6.0, 4);
    assert!((collective_coordinate(&cfg, &[0.0, 0.0]).re - 17.0).abs() < 1e-12);
    let k = [2.0 * PI / 6.0, -4.0 * PI / 6.0];
    let neg = [-k[0], -k[1]];
    let a = collective_coordinate(&cfg, &k);
    let b = collective_coordinate(&cfg, &neg);
    assert!((a - b.conj()).norm() < 1e-12);
    let empty = PointConfiguration::new(1, 3.0, &[]).unwrap();
    assert!(structure_factor(&empty, &[vec![1.0]]).is_err());
}

#[test]
fn gradient_matches_finite_differences() {
    let gap1 = GapRegion::ball_for_points(1, 24.0, 1.0).unwrap();
    let gap2 = GapRegion::ball_for_points(2, 6.0, 2.5).unwrap();
    for seed in 0..10u64 {
        let (cfg, gap) = if seed % 2 == 0 {
            (uniform(1, 24, 24.0, seed), &gap1)
        } else {
            (uniform(2, 12, 6.0, seed), &gap2)
        };
        let (_, grad) = energy_and_gradient(&cfg, gap).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..cfg.coords().len())
            .map(|i| {
                let shift = |s: f64| {
                    let mut c = cfg.coords().to_vec();
                    c[i] += s;
                    collective_energy(&PointConfiguration::from_flat(cfg.d(), cfg.box_length(), c).unwrap(), gap)
                        .unwrap()
                };
                (shift(h) - shift(-h)) / (2.0 * h)
            })
            .collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-6 * norm, "seed {seed}: {diff} vs {norm}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn translation_and_relabeling_invariance(seed in any::<u64>(), shift in -50.0f64..50.0, rot in 0usize..20) {
        let cfg = uniform(1, 20, 20.0, seed);
        let gap = GapRegion::ball_for_points(1, 20.0, 1.5).unwrap();
        let modes = line_modes(20.0, 1..=6);
        let moved = cfg.translated(&[shift]).unwrap();
        let mut coords = cfg.coords().to_vec();
        coords.rotate_left(rot);
        coords.swap(0, 19);
        let relabeled = PointConfiguration::from_flat(1, 20.0, coords).unwrap();
        let base = structure_factor(&cfg, &modes).unwrap();
        for other in [&moved, &relabeled] {
            for (a, b) in base.iter().zip(structure_factor(other, &modes).unwrap()) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
            }
        }
        let e = collective_energy(&cfg, &gap).unwrap();
        prop_assert!((e - collective_energy(&moved, &gap).unwrap()).abs() <= 1e-10 * (1.0 + e));
        prop_assert!((e - collective_energy(&relabeled, &gap).unwrap()).abs() <= 1e-10 * (1.0 + e));
    }

    #[test]
    fn single_point_factor_is_one(x in 0.0f64..7.0, j in 1i64..20) {
        let cfg = PointConfiguration::new(1, 7.0, &[vec![x]]).unwrap();
        let s = structure_factor(&cfg, &line_modes(7.0, [j, -j])).unwrap();
        prop_assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }
}

#[test]
fn csv_keeps_certificate() {
    let gap = GapRegion::ball_for_points(1, 16.0, 0.5).unwrap();
    let cfg = generate_stealthy(16, &gap, 1).unwrap();
    let mut buf = Vec::new();
    cfg.write_csv(&mut buf).unwrap();
    let back = PointConfiguration::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.coords(), cfg.coords());
    let cert = back.certificate().unwrap();
    assert_eq!(cert.gap, gap);
    assert!(cert.energy <= cert.tolerance);
}

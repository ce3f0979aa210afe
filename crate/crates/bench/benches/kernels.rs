use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stealthy_core::gaussian::{sample_field, GaussianSpec};
use stealthy_core::lattice::{forward_dft, LatticeArray, Space, TorusGeometry};
use stealthy_core::points::{energy_and_gradient, generate_stealthy, perturbed_lattice};
use stealthy_core::stats::find_largest_hole;
use stealthy_core::structure::{GapRegion, StructureFunction};

fn dft(c: &mut Criterion) {
    for (d, n) in [(1, 4096), (2, 128), (3, 32)] {
        let g = TorusGeometry::new(d, n, n as f64).unwrap();
        let values: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = LatticeArray::from_real(g, Space::Physical, &values).unwrap();
        c.bench_function(&format!("dft d={d} n={n}"), |b| b.iter(|| forward_dft(black_box(&a)).unwrap()));
    }
}

fn energy(c: &mut Criterion) {
    let gap = GapRegion::ball_for_points(1, 512.0, 1.0).unwrap();
    let cfg = perturbed_lattice(1, 512, 512.0, 0.3, None, 1).unwrap();
    c.bench_function("energy gradient N=512", |b| {
        b.iter(|| energy_and_gradient(black_box(&cfg), &gap).unwrap())
    });
    let gap2 = GapRegion::ball_for_points(2, 16.0, 1.0).unwrap();
    let cfg2 = perturbed_lattice(2, 16, 16.0, 0.3, None, 1).unwrap();
    c.bench_function("energy gradient d=2 N=256", |b| {
        b.iter(|| energy_and_gradient(black_box(&cfg2), &gap2).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let g = TorusGeometry::new(2, 64, 64.0).unwrap();
    let spec = GaussianSpec::new(StructureFunction::stealthy_flat(g, 0.5).unwrap(), 3);
    c.bench_function("sample_field 16 x 64^2", |b| b.iter(|| sample_field(black_box(&spec), 16).unwrap()));
}

fn holes(c: &mut Criterion) {
    let gap = GapRegion::ball_for_points(1, 256.0, 0.5).unwrap();
    let line = generate_stealthy(256, &gap, 5).unwrap();
    c.bench_function("holes d=1 N=256", |b| b.iter(|| find_largest_hole(black_box(&line), 8).unwrap()));
    let plane = perturbed_lattice(2, 12, 12.0, 0.4, None, 2).unwrap();
    c.bench_function("holes d=2 N=144", |b| b.iter(|| find_largest_hole(black_box(&plane), 4).unwrap()));
}

criterion_group!(benches, dft, energy, sampling, holes);
criterion_main!(benches);

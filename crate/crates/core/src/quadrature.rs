//! Quadrature rules and a few special functions.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    x.into_iter()
        .zip(w)
        .map(|(xi, wi)| (mid + half * xi, half * wi))
        .collect()
}

/// Hurwitz zeta `sum_{k>=0} (q+k)^-s` for `s > 1`, `q > 0`, by Euler-Maclaurin.
pub fn hurwitz_zeta(s: f64, q: f64) -> f64 {
    const B2: [f64; 8] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
        -3617.0 / 510.0,
    ];
    let n = 12;
    let mut sum: f64 = (0..n).map(|k| (q + k as f64).powf(-s)).sum();
    let a = q + n as f64;
    sum += a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s);
    // B_{2j}/(2j)! * s(s+1)...(s+2j-2) * a^{-s-2j+1}
    let mut rising = s;
    let mut fact = 2.0;
    for (j, b) in B2.iter().enumerate() {
        let j = j + 1;
        sum += b / fact * rising * a.powf(-s - 2.0 * j as f64 + 1.0);
        rising *= (s + 2.0 * j as f64 - 1.0) * (s + 2.0 * j as f64);
        fact *= (2 * j + 1) as f64 * (2 * j + 2) as f64;
    }
    sum
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => 2.0 * PI.powf(d as f64 / 2.0) / statrs::function::gamma::gamma(d as f64 / 2.0),
    }
}

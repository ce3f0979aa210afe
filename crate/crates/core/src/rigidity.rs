//! Reconstruction from outside data: field values inside a window, point
//! positions inside a ball (via the empirical characteristic function) and
//! inside moments under fast spectral decay.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::gaussian::FieldRealization;
use crate::points::{min_image, PointConfiguration, StealthCertificate, StealthyGenerator};
use crate::quadrature::gauss_legendre;
use crate::structure::{count_constraints, GapRegion};
use crate::testfn::plateau;

/// Sites of a lattice split into an inside window and its complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSplit {
    pub inside: Vec<usize>,
}

impl WindowSplit {
    pub fn new(mut inside: Vec<usize>) -> Self {
        inside.sort_unstable();
        inside.dedup();
        Self { inside }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldReconstruction {
    pub inside: Vec<usize>,
    pub values: Vec<f64>,
    pub residual: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub warnings: Vec<String>,
}

/// Solves `sum_{inside} xi(x) e^{-ik.x} = -sum_{outside} xi(x) e^{-ik.x}` over the
/// gap modes by least squares. Only values at outside sites are read.
pub fn reconstruct_field_inside(
    field: &FieldRealization,
    gap: &GapRegion,
    split: &WindowSplit,
) -> Result<FieldReconstruction> {
    let g = field.geometry;
    if *gap.geometry() != g {
        return Err(Error::Dimension("gap geometry differs from the field".into()));
    }
    if split.inside.iter().any(|&i| i >= g.len()) {
        return Err(Error::InvalidParameter("inside site out of range".into()));
    }
    let unknowns = split.inside.len();
    if unknowns == 0 {
        return Ok(FieldReconstruction {
            inside: Vec::new(),
            values: Vec::new(),
            residual: 0.0,
            sigma_min: 0.0,
            sigma_max: 0.0,
            warnings: Vec::new(),
        });
    }
    let constraints = count_constraints(gap).real;
    if unknowns > constraints {
        return Err(Error::RankDeficient { unknowns, constraints, conditioning: 0.0 });
    }
    let mut is_inside = vec![false; g.len()];
    for &i in &split.inside {
        is_inside[i] = true;
    }
    // one real row per self-conjugate mode, two per +/- pair
    let mut rows: Vec<(usize, bool)> = Vec::new();
    for m in gap.modes() {
        let partner = g.negate(m);
        if partner == m {
            rows.push((m, false));
        } else if m < partner {
            rows.push((m, false));
            rows.push((m, true));
        }
    }
    let mut a = DMatrix::<f64>::zeros(rows.len(), unknowns);
    let mut rhs = DVector::<f64>::zeros(rows.len());
    for (r, &(mode, imag)) in rows.iter().enumerate() {
        let part = |site: usize| {
            let (s, c) = g.phase(mode, site).sin_cos();
            if imag { -s } else { c }
        };
        for (c, &site) in split.inside.iter().enumerate() {
            a[(r, c)] = part(site);
        }
        rhs[r] = -(0..g.len())
            .filter(|&x| !is_inside[x])
            .map(|x| field.values[x] * part(x))
            .sum::<f64>();
    }
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    let conditioning = if sigma_max > 0.0 { sigma_min / sigma_max } else { 0.0 };
    if conditioning < 1e-8 {
        return Err(Error::RankDeficient { unknowns, constraints, conditioning });
    }
    let mut warnings = Vec::new();
    if sigma_min < 1e-10 {
        warnings.push(format!("smallest singular value {sigma_min:e} is below 1e-10"));
    }
    let x = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Construction(format!("least squares failed: {e}")))?;
    let residual = (&a * &x - &rhs).norm();
    Ok(FieldReconstruction {
        inside: split.inside.clone(),
        values: x.iter().copied().collect(),
        residual,
        sigma_min,
        sigma_max,
        warnings,
    })
}

/// Ball `|x - center| < radius` whose contents are to be recovered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSplit {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcfOptions {
    /// Largest sinc^2 width parameter; the extrapolation also uses `beta0/2` and `beta0/4`.
    pub beta0: f64,
    /// Gaussian smoothing of the window; chosen from the spectral margin when absent.
    pub sigma: Option<f64>,
    /// Reject samples whose error bar exceeds this value.
    pub tolerance: Option<f64>,
}

impl Default for EcfOptions {
    fn default() -> Self {
        Self { beta0: 0.05, sigma: None, tolerance: None }
    }
}

/// Outside-determined values of `sum_{inside} exp(i (mu+theta).(X - center))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcfSamples {
    pub d: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub mu: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
    /// Extrapolated to `beta -> 0`.
    pub values: Vec<Complex64>,
    /// Values at `beta0` without extrapolation.
    pub fixed_beta: Vec<Complex64>,
    pub error_bars: Vec<f64>,
    /// Spectral leak and certificate contribution to each bar.
    pub leak: Vec<f64>,
    /// Extrapolation residual contribution to each bar.
    pub extrapolation: Vec<f64>,
    pub sigma: f64,
    /// Half-width of the plateau of the window.
    pub plateau: f64,
    pub beta0: f64,
}

impl EcfSamples {
    /// Point count read off at `theta = 0`, when that sample is present.
    pub fn count_estimate(&self) -> Option<usize> {
        self.thetas
            .iter()
            .position(|t| t.iter().all(|&v| v == 0.0))
            .filter(|_| self.mu.iter().all(|&m| m == 0.0))
            .map(|i| self.values[i].re.round().max(0.0) as usize)
    }
}

/// One-dimensional window `1_[-s,s]` convolved with a Gaussian of width `sigma`.
#[derive(Debug, Clone, Copy)]
struct Window {
    s: f64,
    sigma: f64,
}

impl Window {
    fn value(&self, t: f64) -> f64 {
        let z = SQRT_2 * self.sigma;
        0.5 * (erf((self.s - t) / z) + erf((self.s + t) / z))
    }

    /// `1 - w(t)` for `|t| <= s`, accurately.
    fn deficit(&self, t: f64) -> f64 {
        let z = SQRT_2 * self.sigma;
        0.5 * (erfc((self.s - t.abs()) / z) + erfc((self.s + t.abs()) / z))
    }

    fn fourier(&self, u: f64) -> f64 {
        let g = (-0.5 * self.sigma * self.sigma * u * u).exp();
        if u.abs() < 1e-12 {
            2.0 * self.s * g
        } else {
            2.0 * (u * self.s).sin() / u * g
        }
    }
}

/// Transform of `exp(i w t) sinc^2(beta t) window(t)` at `kappa`.
struct FactorTransform {
    nodes: Vec<(f64, f64)>,
}

impl FactorTransform {
    fn new() -> Self {
        let (x, w) = gauss_legendre(48);
        Self { nodes: x.into_iter().zip(w).collect() }
    }

    fn eval(&self, win: &Window, omega: f64, beta: f64, kappa: f64) -> f64 {
        // (1/2beta) int tri((q - omega)/2beta) w_hat(kappa - q) dq, split at the kink
        let h = 2.0 * beta;
        let mut sum = 0.0;
        for (x, w) in &self.nodes {
            let t = 0.5 * (x + 1.0);
            let tri = 1.0 - t;
            sum += w * tri * (win.fourier(kappa - omega - h * t) + win.fourier(kappa - omega + h * t));
        }
        sum * 0.5 * h / (2.0 * beta)
    }
}

fn sinc2(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let s = x.sin() / x;
        s * s
    }
}

/// Evaluates the outside side of the identity for every `theta`:
/// `F = rho g_hat(0) - sum_{outside} g(x)` with
/// `g(y) = exp(i (mu+theta).y) prod sinc^2(beta y_i) w(y_i)`, `y = x - center`,
/// where `w` equals one on the ball (to rounding) and has a Gaussian-damped
/// transform. Values at `beta0, beta0/2, beta0/4` are extrapolated to `beta -> 0`.
///
/// The bar of each sample adds the contribution of torus modes outside the gap,
/// the certificate energy on masked modes, the extrapolation residual, the
/// window deficit on the ball, the part of the window beyond half a box and
/// rounding.
#[allow(clippy::too_many_arguments)]
pub fn ecf_from_outside(
    outside: &PointConfiguration,
    rho: f64,
    split: &BallSplit,
    certificate: &StealthCertificate,
    mu: &[f64],
    thetas: &[Vec<f64>],
    opts: &EcfOptions,
) -> Result<EcfSamples> {
    let d = outside.d();
    let l = outside.box_length();
    let gap = &certificate.gap;
    let g = gap.geometry();
    if split.center.len() != d || mu.len() != d || thetas.iter().any(|t| t.len() != d) {
        return Err(Error::Dimension("center, mu and theta must match the configuration".into()));
    }
    if g.d() != d || (g.box_length() - l).abs() > 1e-12 * l {
        return Err(Error::Dimension("certificate gap does not match the configuration box".into()));
    }
    if thetas.is_empty() {
        return Err(Error::InvalidParameter("empty theta grid".into()));
    }
    let beta0 = opts.beta0;
    if !(beta0 > 0.0) {
        return Err(Error::InvalidParameter("beta0 must be positive".into()));
    }
    let dk = g.dk();
    let half_n = (g.n() / 2) as i64;
    let masked = |j: &[i64]| -> bool {
        j.iter().all(|&x| x.abs() < half_n) && gap.contains(g.index_of_signed(j))
    };

    // support cubes must stay inside the gap; the margin sets the window smoothing
    let mut margin = f64::INFINITY;
    for t in thetas {
        let center: Vec<f64> = t.iter().zip(mu).map(|(a, b)| a + b).collect();
        let hw = 2.0 * beta0;
        let lo: Vec<i64> = center.iter().map(|c| ((c - hw) / dk).floor() as i64 - 1).collect();
        let hi: Vec<i64> = center.iter().map(|c| ((c + hw) / dk).ceil() as i64 + 1).collect();
        let reach = (g.n() as f64 / 2.0) as i64;
        // scan a neighbourhood of the cube for unmasked modes
        let pad = reach.min(4 + (3.0 / dk) as i64);
        let spans: Vec<(i64, i64)> = lo.iter().zip(&hi).map(|(a, b)| (a - pad, b + pad)).collect();
        let mut j = spans.iter().map(|s| s.0).collect::<Vec<_>>();
        loop {
            let k: Vec<f64> = j.iter().map(|&x| x as f64 * dk).collect();
            let dist = k
                .iter()
                .zip(&center)
                .map(|(a, c)| ((a - c).abs() - hw).max(0.0))
                .fold(0.0, f64::max);
            if !masked(&j) {
                if dist == 0.0 {
                    return Err(Error::SupportViolation(format!(
                        "theta {t:?}: mode {j:?} in the support cube is not masked"
                    )));
                }
                margin = margin.min(dist);
            }
            let mut a = 0;
            loop {
                if a == d {
                    break;
                }
                j[a] += 1;
                if j[a] <= spans[a].1 {
                    break;
                }
                j[a] = spans[a].0;
                a += 1;
            }
            if a == d {
                break;
            }
        }
    }
    if !margin.is_finite() {
        margin = 3.0;
    }
    let sigma = opts.sigma.unwrap_or(7.5 / margin);
    let win = Window { s: split.radius + 7.0 * sigma, sigma };
    let cut = win.s + 7.5 * sigma;
    if 2.0 * cut > l {
        return Err(Error::Precision {
            bar: f64::INFINITY,
            tolerance: opts.tolerance.unwrap_or(0.0),
        });
    }

    // outside points near the ball, as offsets from the center
    let offsets: Vec<Vec<f64>> = outside
        .points()
        .map(|p| p.iter().zip(&split.center).map(|(x, c)| min_image(x - c, l)).collect::<Vec<f64>>())
        .filter(|y| y.iter().all(|v| v.abs() <= cut))
        .collect();
    let far_bound = outside.len() as f64 * win.value(0.5 * l).abs().max(0.5 * erfc((0.5 * l - win.s) / (SQRT_2 * sigma)));
    let weights: Vec<f64> = offsets
        .iter()
        .map(|y| y.iter().map(|&t| win.value(t)).product())
        .collect();
    let deficit = (0..d).map(|_| win.deficit(split.radius)).sum::<f64>();
    let n_total = rho * l.powi(d as i32);

    let ft = FactorTransform::new();
    let kcut = 12.0 / sigma;
    let amp = certificate.amplitude_bound();
    let betas = [beta0, 0.5 * beta0, 0.25 * beta0];

    let mut values = Vec::with_capacity(thetas.len());
    let mut fixed = Vec::with_capacity(thetas.len());
    let mut bars = Vec::with_capacity(thetas.len());
    let mut leaks = Vec::with_capacity(thetas.len());
    let mut extraps = Vec::with_capacity(thetas.len());
    for t in thetas {
        let omega: Vec<f64> = t.iter().zip(mu).map(|(a, b)| a + b).collect();
        let mut f = [Complex64::new(0.0, 0.0); 3];
        let mut leak_max = 0.0_f64;
        let mut magnitude = 0.0_f64;
        for (bi, &beta) in betas.iter().enumerate() {
            let ghat0: f64 = omega.iter().map(|&w| ft.eval(&win, w, beta, 0.0)).product();
            let mut sum = Complex64::new(0.0, 0.0);
            let mut abs_sum = 0.0;
            for (y, w) in offsets.iter().zip(&weights) {
                let ph: f64 = y.iter().zip(&omega).map(|(a, b)| a * b).sum();
                let s: f64 = y.iter().map(|&v| sinc2(beta * v)).product();
                let v = s * w;
                sum += Complex64::from_polar(v, ph);
                abs_sum += v.abs();
            }
            f[bi] = rho * ghat0 - sum;
            magnitude = magnitude.max((rho * ghat0).abs() + abs_sum);

            // per-axis factor transforms on the torus modes that matter
            let axes: Vec<Vec<(i64, f64)>> = omega
                .iter()
                .map(|&w| {
                    let lo = ((w - 2.0 * beta - kcut) / dk).floor() as i64;
                    let hi = ((w + 2.0 * beta + kcut) / dk).ceil() as i64;
                    (lo..=hi).map(|j| (j, ft.eval(&win, w, beta, j as f64 * dk).abs())).collect()
                })
                .collect();
            let mut leak = 0.0;
            let mut idx = vec![0usize; d];
            loop {
                let j: Vec<i64> = idx.iter().enumerate().map(|(a, &i)| axes[a][i].0).collect();
                let gabs: f64 = idx.iter().enumerate().map(|(a, &i)| axes[a][i].1).product();
                if j.iter().any(|&x| x != 0) {
                    leak += gabs * if masked(&j) { amp } else { n_total };
                }
                let mut a = 0;
                while a < d {
                    idx[a] += 1;
                    if idx[a] < axes[a].len() {
                        break;
                    }
                    idx[a] = 0;
                    a += 1;
                }
                if a == d {
                    break;
                }
            }
            // bound for the modes beyond the enumerated range on each axis
            let tail = n_total * (2.0 / (kcut * sigma)).powi(1) * (-0.5 * (kcut * sigma).powi(2)).exp();
            leak_max = leak_max.max((leak + tail) / l.powi(d as i32));
        }
        // Richardson in beta^2
        let r1a = (4.0 * f[1] - f[0]) / 3.0;
        let r1b = (4.0 * f[2] - f[1]) / 3.0;
        let r2 = (16.0 * r1b - r1a) / 15.0;
        let extrap = (r2 - r1b).norm();
        let coefficient_mass = (64.0 + 20.0 + 1.0) / 45.0;
        let leak = coefficient_mass * (leak_max + far_bound + 1e-15 * magnitude * 8.0);
        let bar = leak + extrap + deficit * 4.0 + 1e-14 * magnitude;
        values.push(r2);
        fixed.push(f[0]);
        bars.push(bar);
        leaks.push(leak);
        extraps.push(extrap);
    }
    if let Some(tol) = opts.tolerance {
        let worst = bars.iter().cloned().fold(0.0, f64::max);
        if worst > tol {
            return Err(Error::Precision { bar: worst, tolerance: tol });
        }
    }
    Ok(EcfSamples {
        d,
        center: split.center.clone(),
        radius: split.radius,
        mu: mu.to_vec(),
        thetas: thetas.to_vec(),
        values,
        fixed_beta: fixed,
        error_bars: bars,
        leak: leaks,
        extrapolation: extraps,
        sigma,
        plateau: win.s,
        beta0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecovery {
    /// Absolute positions (center added back), sorted.
    pub positions: Vec<Vec<f64>>,
    /// Per-point error bar on each coordinate.
    pub error_bars: Vec<f64>,
    /// RMS misfit of the unit-weight exponential model.
    pub residual: f64,
    pub warnings: Vec<String>,
}

fn model_residual(ecf: &EcfSamples, pos: &[Vec<f64>]) -> Vec<f64> {
    let mut r = Vec::with_capacity(2 * ecf.values.len());
    for (t, f) in ecf.thetas.iter().zip(&ecf.values) {
        let omega: Vec<f64> = t.iter().zip(&ecf.mu).map(|(a, b)| a + b).collect();
        let m: Complex64 = pos
            .iter()
            .map(|x| Complex64::from_polar(1.0, x.iter().zip(&omega).map(|(a, b)| a * b).sum()))
            .sum();
        let diff = f - m;
        r.push(diff.re);
        r.push(diff.im);
    }
    r
}

fn model_jacobian(ecf: &EcfSamples, pos: &[Vec<f64>]) -> DMatrix<f64> {
    let d = ecf.d;
    let mut jac = DMatrix::<f64>::zeros(2 * ecf.values.len(), pos.len() * d);
    for (row, t) in ecf.thetas.iter().enumerate() {
        let omega: Vec<f64> = t.iter().zip(&ecf.mu).map(|(a, b)| a + b).collect();
        for (j, x) in pos.iter().enumerate() {
            let ph: f64 = x.iter().zip(&omega).map(|(a, b)| a * b).sum();
            let (s, c) = ph.sin_cos();
            for a in 0..d {
                // derivative of the model; the residual is data minus model
                jac[(2 * row, j * d + a)] = -omega[a] * s;
                jac[(2 * row + 1, j * d + a)] = omega[a] * c;
            }
        }
    }
    jac
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.iter().map(|x| x * x).sum::<f64>() / (v.len() / 2).max(1) as f64).sqrt()
    }
}

/// Levenberg-Marquardt refinement of unit-weight positions.
fn refine(ecf: &EcfSamples, mut pos: Vec<Vec<f64>>, iterations: usize) -> Vec<Vec<f64>> {
    let d = ecf.d;
    let mut lambda = 1e-6;
    let mut cost: f64 = model_residual(ecf, &pos).iter().map(|x| x * x).sum();
    for _ in 0..iterations {
        let r = DVector::from_vec(model_residual(ecf, &pos));
        let jac = model_jacobian(ecf, &pos);
        let jt = jac.transpose();
        let mut h = &jt * &jac;
        let grad = &jt * &r;
        let diag: Vec<f64> = (0..h.nrows()).map(|i| h[(i, i)]).collect();
        for (i, dv) in diag.iter().enumerate() {
            h[(i, i)] += lambda * dv.max(1e-12);
        }
        let Some(step) = h.clone().lu().solve(&grad) else { break };
        let trial: Vec<Vec<f64>> = pos
            .iter()
            .enumerate()
            .map(|(j, x)| x.iter().enumerate().map(|(a, v)| v + step[j * d + a]).collect())
            .collect();
        let new_cost: f64 = model_residual(ecf, &trial).iter().map(|x| x * x).sum();
        if new_cost < cost {
            pos = trial;
            let converged = cost - new_cost <= 1e-30 + 1e-15 * cost;
            cost = new_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if converged {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e8 {
                break;
            }
        }
    }
    pos
}

fn matrix_pencil(samples: &[Complex64], order: usize) -> Result<(Vec<Complex64>, f64)> {
    let k = samples.len();
    let p = k / 2;
    let rows = k - p;
    let y = DMatrix::<Complex64>::from_fn(rows, p + 1, |r, c| samples[r + c]);
    let svd = y.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Construction("SVD failed".into()))?;
    let sv = &svd.singular_values;
    // singular values come sorted in decreasing order
    let top = sv[0];
    let ratio = if order <= sv.len() && top > 0.0 { sv[order - 1] / top } else { 0.0 };
    // signal subspace as columns: conj(V_s) = transpose of the first rows of V^H
    let w = v_t.rows(0, order).transpose();
    let w_top = w.rows(0, p).into_owned();
    let w_bot = w.rows(1, p).into_owned();
    let pinv = w_top
        .pseudo_inverse(1e-14)
        .map_err(|e| Error::Construction(e.to_string()))?;
    let m = pinv * w_bot;
    let eig = nalgebra::Schur::new(m)
        .eigenvalues()
        .ok_or_else(|| Error::Construction("eigenvalues did not converge".into()))?;
    Ok((eig.iter().copied().collect(), ratio))
}

/// Largest peaks of the adjoint transform `|sum_m F_m exp(-i w_m.x)|` over the ball.
fn adjoint_peaks(ecf: &EcfSamples, count: usize, resolution: f64) -> Vec<Vec<f64>> {
    let d = ecf.d;
    let r = ecf.radius;
    let pitch = (resolution / 16.0).min(r / 32.0);
    let per_axis = (2.0 * r / pitch).ceil() as usize + 1;
    let mut grid = Vec::new();
    let total = per_axis.pow(d as u32);
    for flat in 0..total {
        let mut rest = flat;
        let x: Vec<f64> = (0..d)
            .map(|_| {
                let i = rest % per_axis;
                rest /= per_axis;
                -r + i as f64 * pitch
            })
            .collect();
        if x.iter().map(|v| v * v).sum::<f64>() > r * r {
            continue;
        }
        let a: Complex64 = ecf
            .thetas
            .iter()
            .zip(&ecf.values)
            .map(|(t, f)| {
                let ph: f64 = t.iter().zip(&ecf.mu).zip(&x).map(|((a, m), y)| (a + m) * y).sum();
                f * Complex64::from_polar(1.0, -ph)
            })
            .sum();
        grid.push((x, a.norm()));
    }
    grid.sort_by(|a, b| b.1.total_cmp(&a.1));
    let exclusion = resolution / 4.0;
    let mut picked: Vec<Vec<f64>> = Vec::new();
    for (x, _) in &grid {
        if picked.len() == count {
            break;
        }
        let far = picked
            .iter()
            .all(|p| p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() > exclusion);
        if far {
            picked.push(x.clone());
        }
    }
    // spread any remainder over the ball
    while picked.len() < count {
        let t = picked.len() as f64 / count as f64 - 0.5;
        picked.push(vec![t * r; d]);
    }
    picked
}

/// Recovers `count` unit-weight points from ECF samples.
///
/// In one dimension the samples must sit on a uniform grid `theta_m = m dtheta`,
/// `m = 0..M`; the grid is mirrored through conjugation when `mu = 0` and the
/// poles of a matrix pencil give starting positions. In two dimensions the
/// start comes from peaks of the adjoint transform over the ball. Both finish
/// with Levenberg-Marquardt on the positions.
pub fn invert_ecf_to_points(ecf: &EcfSamples, count: usize, tolerance: Option<f64>) -> Result<PointRecovery> {
    let d = ecf.d;
    if !(1..=2).contains(&d) {
        return Err(Error::InvalidParameter(format!("inversion supports d = 1, 2, got {d}")));
    }
    let mut warnings = Vec::new();
    if count == 0 {
        let r = model_residual(ecf, &[]);
        return Ok(PointRecovery { positions: Vec::new(), error_bars: Vec::new(), residual: rms(&r), warnings });
    }
    let theta_max = ecf
        .thetas
        .iter()
        .map(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let resolution = PI / theta_max.max(1e-300);

    let start: Vec<Vec<f64>> = if d == 1 {
        let step = ecf.thetas.get(1).map(|t| t[0] - ecf.thetas[0][0]).unwrap_or(0.0);
        let uniform = ecf.thetas[0][0] == 0.0
            && step > 0.0
            && ecf
                .thetas
                .iter()
                .enumerate()
                .all(|(m, t)| (t[0] - m as f64 * step).abs() <= 1e-12 * (1.0 + t[0].abs()));
        if !uniform {
            return Err(Error::InvalidParameter("1-d inversion needs theta_m = m * step starting at 0".into()));
        }
        let samples: Vec<Complex64> = if ecf.mu[0] == 0.0 {
            let mut s: Vec<Complex64> = ecf.values.iter().skip(1).rev().map(|v| v.conj()).collect();
            s.extend_from_slice(&ecf.values);
            s
        } else {
            ecf.values.clone()
        };
        if samples.len() < 2 * count + 1 {
            return Err(Error::InvalidParameter("too few samples for the requested count".into()));
        }
        let (poles, ratio) = matrix_pencil(&samples, count)?;
        if ratio < 1e-9 {
            warnings.push(format!(
                "ill-posed: signal subspace nearly degenerate (singular value ratio {ratio:e})"
            ));
        }
        // z = exp(i step x)
        poles.iter().map(|z| vec![z.arg() / step]).collect()
    } else {
        adjoint_peaks(ecf, count, resolution)
    };

    let mut pos = refine(ecf, start, 200);
    if d == 1 && rms(&model_residual(ecf, &pos)) > 1e-6 {
        let alt = refine(ecf, adjoint_peaks(ecf, count, resolution), 200);
        if rms(&model_residual(ecf, &alt)) < rms(&model_residual(ecf, &pos)) {
            pos = alt;
        }
    }
    pos.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let r = model_residual(ecf, &pos);
    let residual = rms(&r);
    let min_sep = pos
        .iter()
        .enumerate()
        .flat_map(|(i, a)| pos[i + 1..].iter().map(move |b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()))
        .fold(f64::INFINITY, f64::min);
    if min_sep < 1e-3 * resolution && !warnings.iter().any(|w| w.starts_with("ill-posed")) {
        warnings.push(format!("ill-posed: points closer than {min_sep:e}"));
    }

    // linearized error bars from the Jacobian pseudo-inverse
    let jac = model_jacobian(ecf, &pos);
    let bar_norm = ecf.error_bars.iter().map(|b| b * b).sum::<f64>().sqrt();
    let resid_norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let pinv = jac.pseudo_inverse(1e-12).map_err(|e| Error::Construction(e.to_string()))?;
    let error_bars: Vec<f64> = (0..pos.len())
        .map(|j| {
            (0..d)
                .map(|a| pinv.row(j * d + a).norm())
                .fold(0.0, f64::max)
                * 2.0
                * (bar_norm + resid_norm)
        })
        .collect();

    let tol = tolerance.unwrap_or_else(|| 1e-6 + 10.0 * ecf.error_bars.iter().cloned().fold(0.0, f64::max));
    let positions: Vec<Vec<f64>> = pos
        .iter()
        .map(|x| x.iter().zip(&ecf.center).map(|(a, c)| a + c).collect())
        .collect();
    if residual > tol {
        return Err(Error::InversionFailure { residual, tolerance: tol, best: positions });
    }
    Ok(PointRecovery { positions, error_bars, residual, warnings })
}

/// Estimate of one inside moment at one scale over an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub exponents: Vec<u32>,
    pub scale: f64,
    pub estimates: Vec<f64>,
    pub truths: Vec<f64>,
    pub errors: Vec<f64>,
    pub median_error: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Outside-computable estimates of `int_D x^[k] d xi` on the cube `D` of the
/// given half-width around the origin: `0 - v sum_{x not in D} x^[k] phi(x/L) xi(x)`
/// for a zero-mean field, compared with the direct inside sum.
pub fn recover_inside_moments(
    fields: &[FieldRealization],
    half_width: f64,
    orders: &[Vec<u32>],
    scales: &[f64],
) -> Result<Vec<MomentEstimate>> {
    let first = fields.first().ok_or_else(|| Error::InvalidParameter("no realizations".into()))?;
    let g = first.geometry;
    if fields.iter().any(|f| f.geometry != g) {
        return Err(Error::Dimension("realizations on different lattices".into()));
    }
    let box_length = g.box_length();
    for &l in scales {
        if l > box_length / 4.0 {
            return Err(Error::Resolution(format!("scale {l} exceeds box/4 = {}", box_length / 4.0)));
        }
        if l < 1.0 {
            return Err(Error::Resolution(format!("scale {l} below one")));
        }
    }
    if orders.iter().any(|o| o.len() != g.d()) {
        return Err(Error::Dimension("multi-index length differs from d".into()));
    }
    let v = g.cell_volume();
    let positions: Vec<Vec<f64>> = (0..g.len()).map(|i| g.centered_position(i)).collect();
    let inside: Vec<bool> = positions
        .iter()
        .map(|x| x.iter().all(|c| c.abs() <= half_width))
        .collect();
    let mut out = Vec::new();
    for k in orders {
        let mono: Vec<f64> = positions
            .iter()
            .map(|x| x.iter().zip(k).map(|(c, &e)| c.powi(e as i32)).product())
            .collect();
        for &l in scales {
            let weight: Vec<f64> = positions
                .iter()
                .zip(&mono)
                .zip(&inside)
                .map(|((x, m), &ins)| {
                    if ins {
                        0.0
                    } else {
                        m * x.iter().map(|c| plateau(c / (l * half_width))).product::<f64>()
                    }
                })
                .collect();
            let mut estimates = Vec::with_capacity(fields.len());
            let mut truths = Vec::with_capacity(fields.len());
            let mut errors = Vec::with_capacity(fields.len());
            for f in fields {
                let outside: f64 = weight.iter().zip(&f.values).map(|(w, x)| w * x).sum::<f64>() * v;
                let truth: f64 = mono
                    .iter()
                    .zip(&inside)
                    .zip(&f.values)
                    .filter(|((_, &ins), _)| ins)
                    .map(|((m, _), x)| m * x)
                    .sum::<f64>()
                    * v;
                let est = -outside;
                estimates.push(est);
                truths.push(truth);
                errors.push((est - truth).abs());
            }
            out.push(MomentEstimate {
                exponents: k.clone(),
                scale: l,
                median_error: median(&errors),
                estimates,
                truths,
                errors,
            });
        }
    }
    Ok(out)
}

/// Parameters of a one-dimensional planted-recovery experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSetup {
    pub box_length: f64,
    pub density: f64,
    /// Gap radius of the stealthy configuration.
    pub gap: f64,
    /// Planted balls per configuration.
    pub balls: usize,
    pub max_inside: usize,
    pub theta_max: f64,
    pub theta_count: usize,
    pub beta0: f64,
}

impl Default for PlantedSetup {
    fn default() -> Self {
        Self {
            box_length: 560.0,
            density: 1.5,
            gap: 1.2,
            balls: 10,
            max_inside: 4,
            theta_max: 0.7,
            theta_count: 15,
            beta0: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTrial {
    pub center: f64,
    pub radius: f64,
    pub truth: Vec<f64>,
    pub recovered: Vec<f64>,
    pub error_bars: Vec<f64>,
    /// Largest ECF error bar.
    pub ecf_bar: f64,
    /// Every ECF sample lies within its bar of the planted truth.
    pub ecf_honest: bool,
    pub max_error: f64,
    /// Every recovered position lies within its bar of the truth.
    pub honest: bool,
    pub warnings: Vec<String>,
    pub failure: Option<String>,
}

/// Plants `1..=max_inside` points in each of `balls` evenly spaced balls of a
/// certified stealthy line configuration, then recovers every ball from the
/// points outside it. Planted points sit on a jittered lattice of the mean
/// spacing so that the local density matches the rest of the system.
pub fn planted_trials(setup: &PlantedSetup, seed: u64) -> Result<Vec<PlantedTrial>> {
    use rand::Rng;
    let l = setup.box_length;
    let n_total = (setup.density * l).round() as usize;
    let spacing = 1.0 / setup.density;
    let gap = GapRegion::ball_for_points(1, l, setup.gap)?;
    let mut rng = crate::stream_rng(seed, u64::MAX);
    let mut pinned = Vec::new();
    let mut balls = Vec::new();
    for i in 0..setup.balls {
        let c = (i as f64 + 0.5) * l / setup.balls as f64 + (rng.random::<f64>() - 0.5) * spacing;
        let k = 1 + rng.random_range(0..setup.max_inside.max(1));
        let mut truth = Vec::with_capacity(k);
        for j in 0..k {
            let offset = (j as f64 - (k as f64 - 1.0) / 2.0 + (rng.random::<f64>() - 0.5) * 0.4) * spacing;
            truth.push(c + offset);
        }
        pinned.extend(truth.iter().map(|&x| vec![x]));
        balls.push((c, k as f64 * spacing / 2.0, truth));
    }
    let mut generator = StealthyGenerator::new(n_total, gap).pinned(pinned);
    for (c, r, _) in &balls {
        generator = generator.exclusion(vec![*c], r + 0.05 * spacing);
    }
    let cfg = generator.generate(seed)?;
    let certificate = cfg.certificate().cloned().ok_or(Error::CertificateMissing)?;
    let step = setup.theta_max / (setup.theta_count.max(2) - 1) as f64;
    let thetas: Vec<Vec<f64>> = (0..setup.theta_count).map(|m| vec![m as f64 * step]).collect();
    let opts = EcfOptions { beta0: setup.beta0, ..Default::default() };

    let mut trials = Vec::with_capacity(balls.len());
    for (c, r, mut truth) in balls {
        truth.sort_by(f64::total_cmp);
        let (_, out) = cfg.split_ball(&[c], r);
        let outside = PointConfiguration::new(1, l, &out)?;
        let split = BallSplit { center: vec![c], radius: r };
        let mut trial = PlantedTrial {
            center: c,
            radius: r,
            truth: truth.clone(),
            recovered: Vec::new(),
            error_bars: Vec::new(),
            ecf_bar: f64::NAN,
            ecf_honest: false,
            max_error: f64::INFINITY,
            honest: false,
            warnings: Vec::new(),
            failure: None,
        };
        let ecf = match ecf_from_outside(&outside, cfg.density(), &split, &certificate, &[0.0], &thetas, &opts) {
            Ok(e) => e,
            Err(e) => {
                trial.failure = Some(e.to_string());
                trials.push(trial);
                continue;
            }
        };
        trial.ecf_bar = ecf.error_bars.iter().cloned().fold(0.0, f64::max);
        trial.ecf_honest = thetas.iter().zip(&ecf.values).zip(&ecf.error_bars).all(|((t, v), b)| {
            let exact: Complex64 = truth.iter().map(|x| Complex64::from_polar(1.0, t[0] * (x - c))).sum();
            (v - exact).norm() <= *b
        });
        let count = ecf.count_estimate().unwrap_or(0);
        if count != truth.len() {
            trial.failure = Some(format!("count estimate {count} differs from {}", truth.len()));
            trials.push(trial);
            continue;
        }
        match invert_ecf_to_points(&ecf, count, None) {
            Ok(rec) => {
                trial.recovered = rec.positions.iter().map(|p| p[0]).collect();
                let errors: Vec<f64> = trial.recovered.iter().zip(&truth).map(|(a, b)| (a - b).abs()).collect();
                trial.max_error = errors.iter().cloned().fold(0.0, f64::max);
                trial.honest = errors.iter().zip(&rec.error_bars).all(|(e, b)| e <= b);
                trial.error_bars = rec.error_bars;
                trial.warnings = rec.warnings;
            }
            Err(e) => trial.failure = Some(e.to_string()),
        }
        trials.push(trial);
    }
    Ok(trials)
}

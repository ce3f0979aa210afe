//! Linear statistics, their variances, the anti-concentration audit, holes
//! and the explicit hole bound.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::FieldRealization;
use crate::lattice::{forward_real, TorusGeometry};
use crate::points::{collective_coordinate, min_image, PointConfiguration};
use crate::quadrature::{binomial, hurwitz_zeta};
use crate::structure::StructureFunction;
use crate::testfn::{transform_on_grid, BumpPair, TestFunction};

/// Object a linear statistic is evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Field(&'a FieldRealization),
    Points(&'a PointConfiguration),
}

pub fn linear_statistic(test: &TestFunction, target: Target<'_>) -> Result<Complex64> {
    match target {
        Target::Field(f) => linear_statistic_field(test, f),
        Target::Points(p) => linear_statistic_points(test, p),
    }
}

/// Torus wavevectors `2 pi j / L` inside a test function's band.
fn band_modes(test: &TestFunction, d: usize, l: f64) -> Result<Vec<Vec<f64>>> {
    let band = test
        .band()
        .ok_or_else(|| Error::InvalidParameter("test function is not band-limited".into()))?;
    let dk = 2.0 * std::f64::consts::PI / l;
    let jmax = (band.reach() / dk).floor() as i64 + 1;
    let span = (2 * jmax + 1) as usize;
    let total = span.pow(d as u32);
    let mut out = Vec::new();
    for idx in 0..total {
        let mut rest = idx;
        let mut k = Vec::with_capacity(d);
        for _ in 0..d {
            k.push(((rest % span) as i64 - jmax) as f64 * dk);
            rest /= span;
        }
        if band.contains(&k) {
            out.push(k);
        }
    }
    Ok(out)
}

/// Periodic linear statistic `sum_j sum_m phi(X_j + m L)`.
///
/// Functions with a finite spatial radius are summed over images directly;
/// slowly decaying band-limited ones (the sinc^2 family) go through Poisson
/// summation, `L^-d sum_k phi_hat(k) rho_hat(-k)`.
pub fn linear_statistic_points(test: &TestFunction, cfg: &PointConfiguration) -> Result<Complex64> {
    let d = cfg.d();
    if test.dim() != d {
        return Err(Error::Dimension("test function and configuration dimensions differ".into()));
    }
    let l = cfg.box_length();
    match test.spatial_radius() {
        Some(radius) => {
            let reach = (radius / l).ceil() as i64 + 1;
            let span = (2 * reach + 1) as usize;
            let images = span.pow(d as u32);
            let mut total = Complex64::new(0.0, 0.0);
            let mut y = vec![0.0; d];
            for p in cfg.points() {
                // nearest image of the point to the origin first
                let base: Vec<f64> = p.iter().map(|&x| min_image(x, l)).collect();
                for idx in 0..images {
                    let mut rest = idx;
                    let mut r2 = 0.0;
                    for a in 0..d {
                        let m = (rest % span) as i64 - reach;
                        rest /= span;
                        y[a] = base[a] + m as f64 * l;
                        r2 += y[a] * y[a];
                    }
                    if r2 <= radius * radius {
                        total += test.eval(&y);
                    }
                }
            }
            Ok(total)
        }
        None => {
            let vol = l.powi(d as i32);
            let mut total = Complex64::new(0.0, 0.0);
            for k in band_modes(test, d, l)? {
                let f = test.fourier(&k).unwrap_or_default();
                if f.norm() == 0.0 {
                    continue;
                }
                total += f * collective_coordinate(cfg, &k).conj();
            }
            Ok(total / vol)
        }
    }
}

/// Lattice linear statistic `v sum_x phi(x) xi(x)`, with `x` in the centered window.
/// Band-limited functions below the Nyquist limit are summed in their periodized
/// form, which is exact for the torus.
pub fn linear_statistic_field(test: &TestFunction, field: &FieldRealization) -> Result<Complex64> {
    let g = field.geometry;
    if test.dim() != g.d() {
        return Err(Error::Dimension("test function and field dimensions differ".into()));
    }
    if let Some(band) = test.band() {
        if band.reach() < g.nyquist() {
            let f = forward_real(&g, &field.values)?;
            let phi = transform_on_grid(test, &g)?;
            let sum: Complex64 = phi.iter().zip(&f).map(|(p, x)| p * x.conj()).sum();
            return Ok(sum / g.len() as f64);
        }
    }
    let v = g.cell_volume();
    Ok((0..g.len())
        .map(|i| test.eval(&g.centered_position(i)) * field.values[i])
        .sum::<Complex64>()
        * v)
}

/// Outcome of comparing `I(phi)` with `rho phi_hat(0)` on a certified configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroVarianceCheck {
    pub value: Complex64,
    pub expected: f64,
    pub deviation: f64,
    /// Bound propagated from the energy certificate plus summation error.
    pub tolerance: f64,
    pub pass: bool,
}

/// `I(phi) = rho phi_hat(0)` for a gap-supported test on a certified configuration.
pub fn check_zero_variance(test: &TestFunction, cfg: &PointConfiguration) -> Result<ZeroVarianceCheck> {
    let cert = cfg.certificate().ok_or(Error::CertificateMissing)?;
    let d = cfg.d();
    let l = cfg.box_length();
    let gap = &cert.gap;
    let g = gap.geometry();
    let modes = band_modes(test, d, l)?;
    let mut sum_sq = 0.0;
    for k in &modes {
        if k.iter().all(|&v| v == 0.0) {
            continue;
        }
        let f = test.fourier(k).unwrap_or_default().norm();
        if f == 0.0 {
            continue;
        }
        let j: Vec<i64> = k.iter().map(|v| (v * l / (2.0 * std::f64::consts::PI)).round() as i64).collect();
        let inside_grid = j.iter().all(|&x| 2 * x.abs() < g.n() as i64);
        if !inside_grid || !gap.contains(g.index_of_signed(&j)) {
            return Err(Error::SupportViolation(format!("mode {j:?} is outside the certified gap")));
        }
        sum_sq += f * f;
    }
    let value = linear_statistic_points(test, cfg)?;
    let mass = test.mass().ok_or_else(|| Error::InvalidParameter("no analytic mass".into()))?;
    let expected = cfg.density() * mass.re;
    let vol = l.powi(d as i32);
    let certificate_term = sum_sq.sqrt() * cert.energy.sqrt() / vol;
    let rounding = 1e-13 * expected.abs().max(cfg.len() as f64 * test.eval(&vec![0.0; d]).norm());
    let tolerance = certificate_term + rounding;
    let deviation = (value - Complex64::new(expected, 0.0)).norm();
    Ok(ZeroVarianceCheck {
        value,
        expected,
        deviation,
        tolerance,
        pass: deviation <= tolerance,
    })
}

/// `n^-d sum_k |phi_hat(k)|^2 S(k)`.
pub fn variance_of_linear_statistic(test: &TestFunction, s: &StructureFunction) -> Result<f64> {
    let g = s.geometry();
    let phi = transform_on_grid(test, g)?;
    Ok(phi
        .iter()
        .zip(s.values())
        .map(|(p, sv)| p.norm_sqr() * sv)
        .sum::<f64>()
        / g.len() as f64)
}

/// Sample variance `sum |I - mean|^2 / (M - 1)` over an ensemble of fields.
pub fn empirical_variance(test: &TestFunction, fields: &[FieldRealization]) -> Result<f64> {
    if fields.len() < 2 {
        return Err(Error::InvalidParameter("need at least two realizations".into()));
    }
    let values: Vec<Complex64> = fields
        .iter()
        .map(|f| linear_statistic_field(test, f))
        .collect::<Result<_>>()?;
    let m = values.len() as f64;
    let mean: Complex64 = values.iter().sum::<Complex64>() / m;
    Ok(values.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (m - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub max_count: usize,
    pub bound: f64,
    pub cube_side: f64,
    /// Grid pitch of the sliding centers; zero when the scan is exact.
    pub pitch: f64,
    pub centers: usize,
    pub pass: bool,
}

fn images_in_interval(x: f64, lo: f64, hi: f64, l: f64) -> i64 {
    // integers m with lo <= x + m l <= hi
    let first = ((lo - x) / l).ceil() as i64;
    let last = ((hi - x) / l).floor() as i64;
    (last - first + 1).max(0)
}

/// Largest number of points (images counted) in a closed cube of side `a/b`,
/// compared with `(psi_hat * psi_hat)(0) rho b^-d`.
pub fn anticoncentration_audit(cfg: &PointConfiguration, b: f64, pair: &BumpPair) -> Result<AuditReport> {
    let cert = cfg.certificate().ok_or(Error::CertificateMissing)?;
    match cert.gap_radius {
        Some(r) if r >= b * (1.0 - 1e-12) => {}
        _ => return Err(Error::CertificateMissing),
    }
    if pair.d() != cfg.d() {
        return Err(Error::Dimension("bump pair dimension".into()));
    }
    let d = cfg.d();
    let l = cfg.box_length();
    let side = pair.a / b;
    let bound = pair.autocorr0 * cfg.density() / b.powi(d as i32);
    if cfg.is_empty() {
        return Ok(AuditReport { max_count: 0, bound, cube_side: side, pitch: 0.0, centers: 0, pass: true });
    }
    if d == 1 {
        // exact: some maximal closed window starts at a point
        let mut xs: Vec<f64> = cfg.coords().to_vec();
        xs.sort_by(|a, b| a.total_cmp(b));
        let n = xs.len();
        let full = (side / l).floor() as usize;
        let rem = side - full as f64 * l;
        let ext: Vec<f64> = xs.iter().copied().chain(xs.iter().map(|x| x + l)).collect();
        let mut best = 0;
        let mut j = 0;
        for i in 0..n {
            j = j.max(i);
            while j + 1 < ext.len() && ext[j + 1] <= xs[i] + rem {
                j += 1;
            }
            best = best.max(j - i + 1);
        }
        let max_count = best + full * n;
        return Ok(AuditReport {
            max_count,
            bound,
            cube_side: side,
            pitch: 0.0,
            centers: n,
            pass: (max_count as f64) <= bound,
        });
    }
    let per_axis = ((8.0 * l / side).ceil() as usize).max(1);
    let pitch = l / per_axis as f64;
    let total = per_axis.pow(d as u32);
    let mut max_count = 0;
    let mut c = vec![0.0; d];
    for idx in 0..total {
        let mut rest = idx;
        for ca in c.iter_mut() {
            *ca = (rest % per_axis) as f64 * pitch;
            rest /= per_axis;
        }
        let count: i64 = cfg
            .points()
            .map(|p| {
                p.iter()
                    .zip(&c)
                    .map(|(x, ca)| images_in_interval(*x, ca - 0.5 * side, ca + 0.5 * side, l))
                    .product::<i64>()
            })
            .sum();
        max_count = max_count.max(count as usize);
    }
    Ok(AuditReport {
        max_count,
        bound,
        cube_side: side,
        pitch,
        centers: total,
        pass: (max_count as f64) <= bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Euclidean,
    LInf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleReport {
    pub radius: f64,
    pub center: Vec<f64>,
    pub norm: NormKind,
    /// True for grid searches, whose radius is a lower bound.
    pub approximate: bool,
}

impl HoleReport {
    /// No point lies strictly inside the reported ball or cube.
    pub fn verify(&self, cfg: &PointConfiguration) -> bool {
        let l = cfg.box_length();
        let slack = 1e-12 * l;
        cfg.points().all(|p| {
            let deltas = p.iter().zip(&self.center).map(|(x, c)| min_image(x - c, l).abs());
            let dist = match self.norm {
                NormKind::Euclidean => deltas.map(|v| v * v).sum::<f64>().sqrt(),
                NormKind::LInf => deltas.fold(0.0, f64::max),
            };
            dist >= self.radius - slack
        })
    }
}

/// Largest empty hole. In one dimension this is exact (half the largest
/// circular gap); otherwise a grid search over centers with pitch
/// `L / (8 resolution)` for the largest empty cube.
pub fn find_largest_hole(cfg: &PointConfiguration, resolution: usize) -> Result<HoleReport> {
    if cfg.is_empty() {
        return Err(Error::EmptyConfiguration);
    }
    let d = cfg.d();
    let l = cfg.box_length();
    if d == 1 {
        let mut xs: Vec<f64> = cfg.coords().to_vec();
        xs.sort_by(|a, b| a.total_cmp(b));
        let n = xs.len();
        let mut best = (0.0, 0.0);
        for i in 0..n {
            let next = if i + 1 < n { xs[i + 1] } else { xs[0] + l };
            let gap = next - xs[i];
            // ties go to the last gap in sorted order
            if gap >= best.0 {
                best = (gap, xs[i]);
            }
        }
        let center = (best.1 + 0.5 * best.0).rem_euclid(l);
        return Ok(HoleReport {
            radius: 0.5 * best.0,
            center: vec![center],
            norm: NormKind::Euclidean,
            approximate: false,
        });
    }
    let per_axis = 8 * resolution.max(1);
    let pitch = l / per_axis as f64;
    let total = per_axis.pow(d as u32);
    let mut best = (0.0, vec![0.0; d]);
    let mut c = vec![0.0; d];
    for idx in 0..total {
        let mut rest = idx;
        for ca in c.iter_mut() {
            *ca = (rest % per_axis) as f64 * pitch;
            rest /= per_axis;
        }
        let nearest = cfg
            .points()
            .map(|p| {
                p.iter()
                    .zip(&c)
                    .map(|(x, ca)| min_image(x - ca, l).abs())
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        if nearest > best.0 {
            best = (nearest, c.clone());
        }
    }
    Ok(HoleReport {
        radius: best.0,
        center: best.1,
        norm: NormKind::LInf,
        approximate: true,
    })
}

/// The explicit hole bound and the numbers behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleBound {
    pub d: usize,
    pub b: f64,
    /// Side `a/b` of the cubes counted by the anti-concentration bound.
    pub theta_side: f64,
    /// `(psi_hat * psi_hat)(0)`, the count constant.
    pub count_constant: f64,
    /// `C` in `|phi_b(x)| <= C |x|^{-d-1}`; equals `sup |y|^{d+1} psi(y)^2 / b`.
    pub decay_constant: f64,
    /// Smallest integer `R` for which an empty cube of half-side `R theta` is impossible.
    pub r_cubes: u64,
    /// `C_1 a^{-d-1} T(R)`, below one at `r_cubes`.
    pub chain_value: f64,
    /// Half-side `R theta` of the excluded cube.
    pub r0_linf: f64,
    /// Euclidean radius `R theta sqrt(d)` of a ball containing that cube.
    pub r0: f64,
    /// `r0 b`.
    pub kappa: f64,
}

/// Annulus tail `T(R) = sum_{m >= R} ((2m+2)^d - (2m)^d) m^{-d-1}`.
pub fn annulus_tail(d: usize, r: u64) -> f64 {
    let q = r as f64;
    2f64.powi(d as i32)
        * (0..d)
            .map(|i| binomial(d, i) * hurwitz_zeta((d + 1 - i) as f64, q))
            .sum::<f64>()
}

/// Radius beyond which a certified stealthy configuration with gap radius `b`
/// cannot have an empty ball. The value scales exactly as `1/b` and does not
/// depend on the density.
pub fn hole_bound(b: f64, pair: &BumpPair) -> Result<HoleBound> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("b = {b}")));
    }
    let d = pair.d();
    let a = pair.a;
    let c1 = pair.decay_constant;
    let lead = c1 / a.powi(d as i32 + 1);
    let mut r = 1u64;
    let mut value = lead * annulus_tail(d, r);
    while value >= 1.0 {
        // T(R) ~ 2^d d R^-1 for large R, so jump close to the answer first
        let guess = (lead * 2f64.powi(d as i32) * d as f64 * 1.5) as u64;
        r = if r < guess { (r * 2).min(guess.max(r + 1)) } else { r + 1 };
        value = lead * annulus_tail(d, r);
        if r > 1_000_000_000 {
            return Err(Error::Construction("hole bound chain does not close".into()));
        }
    }
    // walk back to the smallest admissible R
    while r > 1 && lead * annulus_tail(d, r - 1) < 1.0 {
        r -= 1;
        value = lead * annulus_tail(d, r);
    }
    let theta = a / b;
    let r0_linf = r as f64 * theta;
    let r0 = r0_linf * (d as f64).sqrt();
    Ok(HoleBound {
        d,
        b,
        theta_side: theta,
        count_constant: pair.autocorr0,
        decay_constant: c1 / b,
        r_cubes: r,
        chain_value: value,
        r0_linf,
        r0,
        kappa: r0 * b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub scales: Vec<f64>,
    pub variances: Vec<f64>,
    /// Least-squares slope of `log Var` against `log L`; `-inf` when the
    /// variance drops to exactly zero at the larger scales.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// RMS residual of the fit in log space.
    pub residual: Option<f64>,
    /// Every variance is exactly zero.
    pub degenerate: bool,
}

/// Least-squares line through `(x, y)`: `(slope, intercept, rms residual)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Variance of `int phi(z/L) d xi(z)` over scales, with the log-log slope.
pub fn variance_decay_fit(s: &StructureFunction, window: &TestFunction, scales: &[f64]) -> Result<DecayFit> {
    if window.dim() != s.geometry().d() {
        return Err(Error::Dimension("window and structure function dimensions differ".into()));
    }
    if scales.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("scales must be increasing".into()));
    }
    let limit = s.geometry().box_length() / 4.0;
    let usable: Vec<f64> = scales.iter().copied().filter(|&l| l <= limit && l > 0.0).collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientScales { usable: usable.len(), required: 3 });
    }
    let variances: Vec<f64> = usable
        .iter()
        .map(|&l| variance_of_linear_statistic(&window.clone().dilate(l), s))
        .collect::<Result<_>>()?;
    let positive: Vec<(f64, f64)> = usable
        .iter()
        .zip(&variances)
        .filter(|(_, v)| **v > 0.0)
        .map(|(l, v)| (l.ln(), v.ln()))
        .collect();
    if positive.is_empty() {
        return Ok(DecayFit {
            scales: usable,
            variances,
            slope: None,
            intercept: None,
            residual: None,
            degenerate: true,
        });
    }
    if positive.len() < variances.len() {
        return Ok(DecayFit {
            scales: usable,
            variances,
            slope: Some(f64::NEG_INFINITY),
            intercept: None,
            residual: None,
            degenerate: false,
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
    let (slope, intercept, residual) = fit_line(&x, &y);
    Ok(DecayFit {
        scales: usable,
        variances,
        slope: Some(slope),
        intercept: Some(intercept),
        residual: Some(residual),
        degenerate: false,
    })
}

/// Geometry helper: `d`-dimensional torus matching a configuration, `n` points per axis.
pub fn geometry_for(cfg: &PointConfiguration, n: usize) -> Result<TorusGeometry> {
    TorusGeometry::new(cfg.d(), n, cfg.box_length())
}

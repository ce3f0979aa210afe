//! Test functions: the anti-concentration square `b^d psi(bx)^2`, the sinc^2
//! rigidity family and scaled monomial windows.
//!
//! Transforms use `f_hat(k) = int f(x) exp(-i k.x) dx` and
//! `f(x) = int f_hat(k) exp(i k.x) dk / (2 pi)^d`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{forward_dft, LatticeArray, Space, TorusGeometry};
use crate::quadrature::{gauss_legendre_on, sphere_area};
use crate::structure::GapRegion;

/// Support radius of `psi_hat`.
pub const PSI_HAT_RADIUS: f64 = 1.0 / 3.0;

fn mollifier(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Grid sizes used to build a [`BumpPair`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    /// Trapezoid intervals on `[0, 1/3]` for the inverse transform.
    pub psi_nodes: usize,
    /// Gauss-Legendre nodes for the transverse integral (d >= 2).
    pub transverse_nodes: usize,
    /// Nodes per axis for the autocorrelation integral.
    pub autocorr_nodes: usize,
    /// Samples of the radial autocorrelation profile on `[0, 2/3]`.
    pub profile_points: usize,
}

impl Resolution {
    fn for_dim(d: usize) -> Self {
        match d {
            1 => Self { psi_nodes: 512, transverse_nodes: 0, autocorr_nodes: 128, profile_points: 512 },
            2 => Self { psi_nodes: 512, transverse_nodes: 96, autocorr_nodes: 96, profile_points: 192 },
            _ => Self { psi_nodes: 384, transverse_nodes: 96, autocorr_nodes: 40, profile_points: 96 },
        }
    }
}

/// The radial bump `psi_hat` (a mollifier supported in `|k| < 1/3`, scaled so
/// `psi(0) = 2`) together with its inverse transform `psi` and the constants
/// derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpPair {
    d: usize,
    /// Multiplier in front of the mollifier.
    scale: f64,
    /// Frequencies and weights of the cosine sum representing `psi` along a ray.
    freqs: Vec<f64>,
    weights: Vec<f64>,
    /// Side of the origin cube on which `psi >= 1`.
    pub a: f64,
    /// First radius where `psi` drops to one.
    pub r1: f64,
    pub psi0: f64,
    /// `(psi_hat * psi_hat)(0) = int psi^2`.
    pub autocorr0: f64,
    /// `int |psi_hat * psi_hat| dk / (2 pi)^d`, equal to `psi(0)^2`.
    pub autocorr_l1: f64,
    /// `int |D^{d+1} (psi_hat * psi_hat)| dk / (2 pi)^d` along the radial profile.
    pub derivative_l1: f64,
    /// `sup_y |y|^{d+1} psi(y)^2`.
    pub decay_constant: f64,
    /// Beyond this radius `|psi| < 1e-9 psi(0)`.
    pub tail_radius: f64,
    profile_step: f64,
    profile: Vec<f64>,
    pub resolution: Resolution,
}

impl BumpPair {
    /// Builds the pair for `d` in `1..=3`.
    pub fn build(d: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidParameter(format!("bump pair supports d = 1, 2, 3, got {d}")));
        }
        let res = Resolution::for_dim(d);
        let kmax = PSI_HAT_RADIUS;
        let m = res.psi_nodes;
        let h = kmax / m as f64;
        // marginal of psi_hat along one axis, P(k1) = int psi_hat dk_perp / (2 pi)^{d-1}
        let marginal = |k1: f64| -> f64 {
            match d {
                1 => mollifier(3.0 * k1),
                _ => {
                    let t = (kmax * kmax - k1 * k1).max(0.0).sqrt();
                    if t == 0.0 {
                        return 0.0;
                    }
                    let rule = gauss_legendre_on(res.transverse_nodes, 0.0, t);
                    let f = |s: f64| mollifier(3.0 * (k1 * k1 + s * s).sqrt());
                    if d == 2 {
                        rule.iter().map(|(s, w)| w * f(*s)).sum::<f64>() / PI
                    } else {
                        rule.iter().map(|(s, w)| w * f(*s) * s).sum::<f64>() / (2.0 * PI)
                    }
                }
            }
        };
        let mut freqs = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        for i in 0..m {
            let k = i as f64 * h;
            let end = if i == 0 { 0.5 } else { 1.0 };
            freqs.push(k);
            weights.push(end * h / PI * marginal(k));
        }
        let raw0: f64 = weights.iter().sum();
        let scale = 2.0 / raw0;
        weights.iter_mut().for_each(|w| *w *= scale);

        let mut pair = Self {
            d,
            scale,
            freqs,
            weights,
            a: 0.0,
            r1: 0.0,
            psi0: 0.0,
            autocorr0: 0.0,
            autocorr_l1: 0.0,
            derivative_l1: 0.0,
            decay_constant: 0.0,
            tail_radius: 0.0,
            profile_step: 0.0,
            profile: Vec::new(),
            resolution: res,
        };
        pair.psi0 = pair.psi_radial(0.0);

        // first crossing of psi = 1
        let mut lo = 0.0;
        let mut hi = 0.05;
        while pair.psi_radial(hi) >= 1.0 {
            lo = hi;
            hi += 0.05;
            if hi > 100.0 {
                return Err(Error::Construction("psi never drops below one".into()));
            }
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if pair.psi_radial(mid) >= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        pair.r1 = lo;
        pair.a = 2.0 * lo / (d as f64).sqrt() * (1.0 - 1e-9);
        pair.certify_cube()?;

        // tail radius and decay constant
        let period_half = PI / h;
        let ymax = (0.9 * period_half).min(5000.0);
        let step = 0.05;
        let mut tail = 0.0;
        let mut best = (0.0, 0.0);
        let mut y = step;
        while y < ymax {
            let p = pair.psi_radial(y);
            if p.abs() > 1e-9 * pair.psi0 {
                tail = y;
            }
            let v = y.powi(d as i32 + 1) * p * p;
            if v > best.1 {
                best = (y, v);
            }
            y += step;
        }
        if tail >= ymax - 1.0 {
            return Err(Error::Construction("psi does not decay inside the quadrature window".into()));
        }
        pair.tail_radius = tail + 1.0;
        let g = |y: f64| {
            let p = pair.psi_radial(y);
            y.powi(d as i32 + 1) * p * p
        };
        let (mut a, mut b) = ((best.0 - step).max(0.0), best.0 + step);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - phi * (b - a);
            let e = a + phi * (b - a);
            if g(c) > g(e) {
                b = e;
            } else {
                a = c;
            }
        }
        pair.decay_constant = g(0.5 * (a + b)).max(best.1) * (1.0 + 1e-9);

        // radial autocorrelation profile and its norms
        pair.autocorr0 = pair.autocorr_direct(0.0);
        let np = res.profile_points;
        let dk = 2.0 * kmax / np as f64;
        pair.profile_step = dk;
        pair.profile = (0..=np).map(|i| pair.autocorr_direct(i as f64 * dk)).collect();
        pair.profile[np] = 0.0;
        let area = sphere_area(d) / (2.0 * PI).powi(d as i32);
        pair.autocorr_l1 = area
            * (0..=np)
                .map(|i| {
                    let end = if i == 0 || i == np { 0.5 } else { 1.0 };
                    end * dk * (i as f64 * dk).powi(d as i32 - 1) * pair.profile[i].abs()
                })
                .sum::<f64>();
        // even extension, then forward differences of order d+1
        let order = d + 1;
        let mut diff: Vec<f64> = pair.profile[1..].iter().rev().cloned().collect();
        diff.extend_from_slice(&pair.profile);
        for _ in 0..order {
            diff = diff.windows(2).map(|w| (w[1] - w[0]) / dk).collect();
        }
        pair.derivative_l1 = area
            * diff
                .iter()
                .enumerate()
                .filter_map(|(i, v)| {
                    let center = i as f64 + 0.5 * order as f64 - np as f64;
                    (center >= 0.0).then(|| dk * (center * dk).powi(d as i32 - 1) * v.abs())
                })
                .sum::<f64>();
        Ok(pair)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Multiplier of the mollifier in `psi_hat`.
    pub fn normalization(&self) -> f64 {
        self.scale
    }

    /// `psi_hat(k) = c exp(-1/(1 - (3|k|)^2))` for `|k| < 1/3`.
    pub fn psi_hat(&self, k: f64) -> f64 {
        self.scale * mollifier(3.0 * k.abs())
    }

    /// `psi` at radius `r`.
    pub fn psi_radial(&self, r: f64) -> f64 {
        let h = self.freqs.get(1).copied().unwrap_or(0.0);
        let step = Complex64::from_polar(1.0, h * r);
        let mut z = Complex64::new(1.0, 0.0);
        let mut sum = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            sum += w * z.re;
            z *= step;
            if i % 64 == 63 {
                // resynchronize to keep rounding from accumulating
                z = Complex64::from_polar(1.0, self.freqs[i] * r + h * r);
            }
        }
        sum
    }

    pub fn psi(&self, x: &[f64]) -> f64 {
        self.psi_radial(x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    fn autocorr_direct(&self, kappa: f64) -> f64 {
        let kmax = PSI_HAT_RADIUS;
        if kappa >= 2.0 * kmax {
            return 0.0;
        }
        let res = self.resolution;
        let norm = (2.0 * PI).powi(self.d as i32);
        match self.d {
            1 => {
                gauss_legendre_on(res.autocorr_nodes, kappa - kmax, kmax)
                    .iter()
                    .map(|(q, w)| w * self.psi_hat(*q) * self.psi_hat(kappa - q))
                    .sum::<f64>()
                    / norm
            }
            d => {
                let m = res.autocorr_nodes;
                let h1 = (2.0 * kmax - kappa) / m as f64;
                let ht = 2.0 * kmax / m as f64;
                let q1s: Vec<f64> = (1..m).map(|i| kappa - kmax + i as f64 * h1).collect();
                let qts: Vec<f64> = (1..m).map(|i| -kmax + i as f64 * ht).collect();
                let mut sum = 0.0;
                for &q1 in &q1s {
                    for &q2 in &qts {
                        if d == 2 {
                            let a = self.psi_hat((q1 * q1 + q2 * q2).sqrt());
                            let b = self.psi_hat(((kappa - q1).powi(2) + q2 * q2).sqrt());
                            sum += a * b;
                        } else {
                            for &q3 in &qts {
                                let t = q2 * q2 + q3 * q3;
                                let a = self.psi_hat((q1 * q1 + t).sqrt());
                                if a == 0.0 {
                                    continue;
                                }
                                sum += a * self.psi_hat(((kappa - q1).powi(2) + t).sqrt());
                            }
                        }
                    }
                }
                sum * h1 * ht.powi(d as i32 - 1) / norm
            }
        }
    }

    /// `(psi_hat * psi_hat)(kappa)` in the `dk / (2 pi)^d` measure; zero for `kappa >= 2/3`.
    pub fn autocorr(&self, kappa: f64) -> f64 {
        let kappa = kappa.abs();
        if kappa >= 2.0 * PSI_HAT_RADIUS {
            return 0.0;
        }
        if self.d == 1 {
            return self.autocorr_direct(kappa);
        }
        // Catmull-Rom interpolation of the tabulated profile
        let t = kappa / self.profile_step;
        let i = t.floor() as usize;
        let f = t - i as f64;
        let at = |j: isize| -> f64 {
            let j = j.unsigned_abs();
            self.profile.get(j).copied().unwrap_or(0.0)
        };
        let i = i as isize;
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        0.5 * (2.0 * p1
            + (-p0 + p2) * f
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * f * f
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * f * f * f)
    }

    fn certify_cube(&self) -> Result<()> {
        let d = self.d;
        let per_axis: usize = match d {
            1 => 257,
            2 => 49,
            _ => 17,
        };
        let total = per_axis.pow(d as u32);
        for idx in 0..total {
            let mut rest = idx;
            let mut r2 = 0.0;
            for _ in 0..d {
                let c = rest % per_axis;
                rest /= per_axis;
                let x = -0.5 * self.a + self.a * c as f64 / (per_axis - 1) as f64;
                r2 += x * x;
            }
            if self.psi_radial(r2.sqrt()) < 1.0 {
                return Err(Error::Construction(format!(
                    "psi falls below one inside the cube of side {}",
                    self.a
                )));
            }
        }
        Ok(())
    }
}

/// Spectral support of a band-limited test function.
#[derive(Debug, Clone, PartialEq)]
pub enum Band {
    Ball { radius: f64 },
    Cube { center: Vec<f64>, half_width: f64 },
}

impl Band {
    pub fn contains(&self, k: &[f64]) -> bool {
        match self {
            Band::Ball { radius } => k.iter().map(|v| v * v).sum::<f64>().sqrt() <= *radius,
            Band::Cube { center, half_width } => {
                k.iter().zip(center).all(|(a, c)| (a - c).abs() <= *half_width)
            }
        }
    }

    /// Largest `|k_i|` reached by the band.
    pub fn reach(&self) -> f64 {
        match self {
            Band::Ball { radius } => *radius,
            Band::Cube { center, half_width } => {
                center.iter().fold(0.0_f64, |m, c| m.max(c.abs())) + half_width
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `b^d psi(bx)^2`, transform `A(|k|/b)` with `A = psi_hat * psi_hat`.
    AntiConcentration { pair: Arc<BumpPair>, b: f64 },
    /// `C exp(i (mu+theta).x) prod sinc^2(beta x_i)` with `C = (beta/pi)^d`, whose
    /// transform is the unit-height triangle product on the cube of half-width
    /// `2 beta` around `mu + theta`.
    Rigidity { mu: Vec<f64>, theta: Vec<f64>, beta: f64 },
    /// `x^[k] phi(x/L)` with `phi = 1` on the cube of half-width `h` and zero
    /// outside the cube of half-width `2h`.
    MonomialWindow { exponents: Vec<u32>, scale: f64, half_width: f64 },
    /// `f(x/s)`.
    Dilated { inner: Box<TestFunction>, scale: f64 },
}

fn smooth_step(u: f64) -> f64 {
    // 0 for u <= 0, 1 for u >= 1
    let f = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let a = f(u);
    let b = f(1.0 - u);
    if a + b == 0.0 { 0.0 } else { a / (a + b) }
}

/// Plateau bump in one variable: one on `[-1, 1]`, zero outside `(-2, 2)`.
pub fn plateau(t: f64) -> f64 {
    smooth_step(2.0 - t.abs())
}

fn sinc2(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let s = x.sin() / x;
        s * s
    }
}

pub fn anticonc_phi(pair: Arc<BumpPair>, b: f64) -> Result<TestFunction> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("b = {b}")));
    }
    Ok(TestFunction::AntiConcentration { pair, b })
}

/// Rigidity test function; with a gap the closed support cube must sit inside the mask.
pub fn rigidity_phi(mu: Vec<f64>, theta: Vec<f64>, beta: f64, gap: Option<&GapRegion>) -> Result<TestFunction> {
    if mu.len() != theta.len() || mu.is_empty() {
        return Err(Error::Dimension("mu and theta must have the same positive length".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta = {beta}")));
    }
    let phi = TestFunction::Rigidity { mu, theta, beta };
    if let Some(gap) = gap {
        let band = phi.band().expect("rigidity functions are band-limited");
        let g = gap.geometry();
        if g.d() != phi.dim() {
            return Err(Error::Dimension("gap dimension".into()));
        }
        if band.reach() >= g.nyquist() {
            return Err(Error::SupportViolation("support cube reaches the Nyquist planes".into()));
        }
        for i in 0..g.len() {
            if !gap.contains(i) && band.contains(&g.wavevector(i)) {
                return Err(Error::SupportViolation(format!(
                    "mode {:?} lies in the support cube but not in the gap",
                    g.signed_indices(i)
                )));
            }
        }
    }
    Ok(phi)
}

pub fn monomial_window(exponents: Vec<u32>, scale: f64, half_width: f64) -> Result<TestFunction> {
    if exponents.is_empty() {
        return Err(Error::Dimension("empty multi-index".into()));
    }
    if !(scale >= 1.0 && half_width > 0.0 && half_width.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale {scale}, half width {half_width}")));
    }
    Ok(TestFunction::MonomialWindow { exponents, scale, half_width })
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        match self {
            TestFunction::AntiConcentration { pair, .. } => pair.d(),
            TestFunction::Rigidity { mu, .. } => mu.len(),
            TestFunction::MonomialWindow { exponents, .. } => exponents.len(),
            TestFunction::Dilated { inner, .. } => inner.dim(),
        }
    }

    pub fn dilate(self, scale: f64) -> Self {
        TestFunction::Dilated { inner: Box::new(self), scale }
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        match self {
            TestFunction::AntiConcentration { pair, b } => {
                let r = b * x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let p = pair.psi_radial(r);
                Complex64::new(b.powi(pair.d() as i32) * p * p, 0.0)
            }
            TestFunction::Rigidity { beta, .. } => {
                let c = (beta / PI).powi(x.len() as i32);
                self.character(x) * (c * x.iter().map(|v| sinc2(beta * v)).product::<f64>())
            }
            TestFunction::MonomialWindow { exponents, scale, half_width } => {
                let mono: f64 = x.iter().zip(exponents).map(|(v, &e)| v.powi(e as i32)).product();
                let w: f64 = x.iter().map(|v| plateau(v / (scale * half_width))).product();
                Complex64::new(mono * w, 0.0)
            }
            TestFunction::Dilated { inner, scale } => {
                let y: Vec<f64> = x.iter().map(|v| v / scale).collect();
                inner.eval(&y)
            }
        }
    }

    /// The `beta -> 0` limit of a rigidity function with `C` removed: `exp(i (mu+theta).x)`.
    pub fn character(&self, x: &[f64]) -> Complex64 {
        match self {
            TestFunction::Rigidity { mu, theta, .. } => {
                let ph: f64 = x.iter().zip(mu.iter().zip(theta)).map(|(v, (m, t))| v * (m + t)).sum();
                Complex64::from_polar(1.0, ph)
            }
            TestFunction::Dilated { inner, scale } => {
                let y: Vec<f64> = x.iter().map(|v| v / scale).collect();
                inner.character(&y)
            }
            _ => Complex64::new(1.0, 0.0),
        }
    }

    /// Analytic transform where one is known in closed form or by quadrature.
    pub fn fourier(&self, k: &[f64]) -> Option<Complex64> {
        match self {
            TestFunction::AntiConcentration { pair, b } => {
                let kn = k.iter().map(|v| v * v).sum::<f64>().sqrt();
                Some(Complex64::new(pair.autocorr(kn / b), 0.0))
            }
            TestFunction::Rigidity { mu, theta, beta } => {
                let v: f64 = k
                    .iter()
                    .zip(mu.iter().zip(theta))
                    .map(|(ki, (m, t))| (1.0 - ((ki - m - t) / (2.0 * beta)).abs()).max(0.0))
                    .product();
                Some(Complex64::new(v, 0.0))
            }
            TestFunction::MonomialWindow { .. } => None,
            TestFunction::Dilated { inner, scale } => {
                let y: Vec<f64> = k.iter().map(|v| v * scale).collect();
                inner
                    .fourier(&y)
                    .map(|f| f * scale.powi(k.len() as i32))
            }
        }
    }

    /// Closed spectral support, when the function is band-limited.
    pub fn band(&self) -> Option<Band> {
        match self {
            TestFunction::AntiConcentration { b, .. } => Some(Band::Ball { radius: 2.0 * PSI_HAT_RADIUS * b }),
            TestFunction::Rigidity { mu, theta, beta } => Some(Band::Cube {
                center: mu.iter().zip(theta).map(|(m, t)| m + t).collect(),
                half_width: 2.0 * beta,
            }),
            TestFunction::MonomialWindow { .. } => None,
            TestFunction::Dilated { inner, scale } => inner.band().map(|b| match b {
                Band::Ball { radius } => Band::Ball { radius: radius / scale },
                Band::Cube { center, half_width } => Band::Cube {
                    center: center.iter().map(|c| c / scale).collect(),
                    half_width: half_width / scale,
                },
            }),
        }
    }

    /// Radius outside which the function is negligible (or exactly zero), if finite.
    pub fn spatial_radius(&self) -> Option<f64> {
        match self {
            TestFunction::AntiConcentration { pair, b } => Some(pair.tail_radius / b),
            TestFunction::Rigidity { .. } => None,
            TestFunction::MonomialWindow { exponents, scale, half_width } => {
                Some(2.0 * scale * half_width * (exponents.len() as f64).sqrt())
            }
            TestFunction::Dilated { inner, scale } => inner.spatial_radius().map(|r| r * scale),
        }
    }

    /// `f_hat(0)`, analytic when available.
    pub fn mass(&self) -> Option<Complex64> {
        self.fourier(&vec![0.0; self.dim()])
    }
}

/// Result of checking that a test function's transform vanishes off a gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportCertificate {
    pub max_outside: f64,
    pub max_overall: f64,
    pub pass: bool,
}

/// Transform of a test function on every mode of a geometry: analytic when
/// known, otherwise the DFT of centered lattice samples times the cell volume.
pub fn transform_on_grid(test: &TestFunction, geometry: &TorusGeometry) -> Result<Vec<Complex64>> {
    if test.dim() != geometry.d() {
        return Err(Error::Dimension("test function and geometry dimensions differ".into()));
    }
    if test.band().is_some() {
        return Ok((0..geometry.len())
            .map(|i| test.fourier(&geometry.wavevector(i)).unwrap_or_default())
            .collect());
    }
    let samples: Vec<Complex64> = (0..geometry.len())
        .map(|i| test.eval(&geometry.centered_position(i)))
        .collect();
    let v = geometry.cell_volume();
    Ok(forward_dft(&LatticeArray::new(*geometry, Space::Physical, samples)?)?
        .values
        .into_iter()
        .map(|z| z * v)
        .collect())
}

/// Ratio test: `max |f_hat|` off the gap must not exceed `1e-10 max |f_hat|`.
pub fn certify_support(test: &TestFunction, gap: &GapRegion) -> Result<SupportCertificate> {
    let f = transform_on_grid(test, gap.geometry())?;
    let mut max_outside = 0.0_f64;
    let mut max_overall = 0.0_f64;
    for (i, z) in f.iter().enumerate() {
        let a = z.norm();
        max_overall = max_overall.max(a);
        if !gap.contains(i) {
            max_outside = max_outside.max(a);
        }
    }
    Ok(SupportCertificate {
        max_outside,
        max_overall,
        pass: max_outside <= 1e-10 * max_overall,
    })
}

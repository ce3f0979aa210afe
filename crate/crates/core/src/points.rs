//! Point configurations in a periodic box and stealthy ground states.
//!
//! A configuration is stealthy for a gap when the collective-coordinate energy
//! `E = sum_{k in gap, k != 0} |rho_hat(k)|^2`, `rho_hat(k) = sum_j exp(-i k.x_j)`,
//! is numerically zero. Such configurations are produced by minimizing `E`
//! with its analytic gradient.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::parse_header;
use crate::lattice::TorusGeometry;
use crate::lbfgs::{self, LbfgsOptions};
use crate::rng::stream_rng;
use crate::structure::{count_constraints, gap_radius, GapKind, GapRegion};

/// Record that a configuration has (numerically) vanishing collective coordinates on a gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StealthCertificate {
    pub gap: GapRegion,
    /// Collective-coordinate energy at the returned positions.
    pub energy: f64,
    /// Threshold the energy was certified against.
    pub tolerance: f64,
    /// Radius of the largest origin ball in the gap, if the gap contains the origin.
    pub gap_radius: Option<f64>,
    pub iterations: usize,
    pub restarts: usize,
}

impl StealthCertificate {
    /// Bound on `|rho_hat(k)|` at any single masked nonzero mode.
    pub fn amplitude_bound(&self) -> f64 {
        (self.energy / 2.0).sqrt()
    }
}

/// Points in `[0, L)^d`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PointConfiguration {
    d: usize,
    box_length: f64,
    coords: Vec<f64>,
    certificate: Option<StealthCertificate>,
}

fn wrap(x: f64, l: f64) -> f64 {
    let w = x.rem_euclid(l);
    if w >= l { 0.0 } else { w }
}

/// Minimal-image displacement.
pub fn min_image(dx: f64, l: f64) -> f64 {
    dx - l * (dx / l).round()
}

impl PointConfiguration {
    pub fn new(d: usize, box_length: f64, points: &[Vec<f64>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * d);
        for p in points {
            if p.len() != d {
                return Err(Error::Dimension(format!("point has {} coordinates, expected {d}", p.len())));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(d, box_length, coords)
    }

    pub fn from_flat(d: usize, box_length: f64, coords: Vec<f64>) -> Result<Self> {
        if d == 0 || !(box_length > 0.0 && box_length.is_finite()) {
            return Err(Error::InvalidParameter(format!("d = {d}, box length = {box_length}")));
        }
        if coords.len() % d != 0 {
            return Err(Error::Dimension("coordinate count is not a multiple of d".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        Ok(Self {
            d,
            box_length,
            coords: coords.into_iter().map(|c| wrap(c, box_length)).collect(),
            certificate: None,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Intensity `N / L^d`.
    pub fn density(&self) -> f64 {
        self.len() as f64 / self.box_length.powi(self.d as i32)
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn certificate(&self) -> Option<&StealthCertificate> {
        self.certificate.as_ref()
    }

    pub fn with_certificate(mut self, certificate: Option<StealthCertificate>) -> Self {
        self.certificate = certificate;
        self
    }

    /// Global translation; collective-coordinate moduli and the certificate are unchanged.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.d {
            return Err(Error::Dimension("shift dimension".into()));
        }
        let coords = self
            .coords
            .iter()
            .enumerate()
            .map(|(i, c)| wrap(c + shift[i % self.d], self.box_length))
            .collect();
        Ok(Self {
            coords,
            ..self.clone()
        })
    }

    /// Splits into points inside and outside the ball `|x - center| < radius` (minimal image).
    pub fn split_ball(&self, center: &[f64], radius: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for p in self.points() {
            let r2: f64 = p
                .iter()
                .zip(center)
                .map(|(x, c)| min_image(x - c, self.box_length).powi(2))
                .sum();
            if r2 < radius * radius {
                inside.push(p.to_vec());
            } else {
                outside.push(p.to_vec());
            }
        }
        (inside, outside)
    }

    /// Checks the energy on `gap` and attaches a certificate when it is at most `tolerance`.
    pub fn certify(self, gap: &GapRegion, tolerance: f64) -> Result<Self> {
        let energy = collective_energy(&self, gap)?;
        if energy > tolerance {
            return Ok(self.with_certificate(None));
        }
        let cert = StealthCertificate {
            gap: gap.clone(),
            energy,
            tolerance,
            gap_radius: gap_radius(gap).ok(),
            iterations: 0,
            restarts: 0,
        };
        Ok(self.with_certificate(Some(cert)))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let (gap, energy, tol) = match &self.certificate {
            Some(c) => (gap_descriptor(&c.gap), c.energy, c.tolerance),
            None => ("none".to_string(), f64::NAN, f64::NAN),
        };
        writeln!(
            w,
            "# d={} box_length={:e} n={} gap={} energy={:e} tolerance={:e}",
            self.d,
            self.box_length,
            self.len(),
            gap,
            energy,
            tol
        )?;
        let names: Vec<String> = (0..self.d).map(|i| format!("x{i}")).collect();
        writeln!(w, "{}", names.join(","))?;
        for p in self.points() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty point file".into()))??;
        let kv = parse_header(&header)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Parse(format!("missing header key {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("bad header value for {k}")))
        };
        let d: usize = get("d")?.parse().map_err(|_| Error::Parse("bad d".into()))?;
        let box_length = num("box_length")?;
        let n: usize = get("n")?.parse().map_err(|_| Error::Parse("bad n".into()))?;
        let mut coords = Vec::with_capacity(n * d);
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('x') {
                continue;
            }
            for field in t.split(',') {
                coords.push(
                    field
                        .trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad coordinate {field}")))?,
                );
            }
        }
        let cfg = Self::from_flat(d, box_length, coords)?;
        if cfg.len() != n {
            return Err(Error::Dimension(format!("header says {n} points, file has {}", cfg.len())));
        }
        let gap = parse_gap_descriptor(get("gap")?, d, box_length)?;
        Ok(match gap {
            Some(gap) => {
                let energy = collective_energy(&cfg, &gap)?;
                let tolerance = num("tolerance")?;
                let cert = (energy <= tolerance).then(|| StealthCertificate {
                    gap_radius: gap_radius(&gap).ok(),
                    gap,
                    energy,
                    tolerance,
                    iterations: 0,
                    restarts: 0,
                });
                cfg.with_certificate(cert)
            }
            None => cfg,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Compact single-token description of a gap, used in CSV headers.
pub fn gap_descriptor(gap: &GapRegion) -> String {
    let n = gap.geometry().n();
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(";");
    match gap.kind() {
        GapKind::Ball { radius } => format!("ball:{radius:e}:{n}"),
        GapKind::ShiftedCube { center, half_width } => format!("cube:{}:{half_width:e}:{n}", join(center)),
        GapKind::Explicit { modes } => format!(
            "explicit:{n}:{}",
            modes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(";")
        ),
    }
}

pub fn parse_gap_descriptor(text: &str, d: usize, box_length: f64) -> Result<Option<GapRegion>> {
    let bad = || Error::Parse(format!("bad gap descriptor {text}"));
    let parts: Vec<&str> = text.split(':').collect();
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    let kind = match parts.as_slice() {
        ["none"] => return Ok(None),
        ["ball", r, n] => (int(n)?, GapKind::Ball { radius: num(r)? }),
        ["cube", c, hw, n] => (
            int(n)?,
            GapKind::ShiftedCube {
                center: c.split(';').map(num).collect::<Result<_>>()?,
                half_width: num(hw)?,
            },
        ),
        ["explicit", n, modes] => (
            int(n)?,
            GapKind::Explicit {
                modes: modes
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(int)
                    .collect::<Result<_>>()?,
            },
        ),
        _ => return Err(bad()),
    };
    Ok(Some(GapRegion::new(TorusGeometry::new(d, kind.0, box_length)?, kind.1)?))
}

/// `rho_hat(k) = sum_j exp(-i k.x_j)`.
pub fn collective_coordinate(cfg: &PointConfiguration, k: &[f64]) -> Complex64 {
    cfg.points()
        .map(|p| {
            let phase: f64 = p.iter().zip(k).map(|(x, ki)| x * ki).sum();
            let (s, c) = phase.sin_cos();
            Complex64::new(c, -s)
        })
        .sum()
}

/// Single-configuration estimator `|rho_hat(k)|^2 / N` at nonzero wavevectors.
pub fn structure_factor(cfg: &PointConfiguration, modes: &[Vec<f64>]) -> Result<Vec<f64>> {
    if cfg.is_empty() {
        return Err(Error::EmptyConfiguration);
    }
    let n = cfg.len() as f64;
    modes
        .iter()
        .map(|k| {
            if k.len() != cfg.d() {
                return Err(Error::Dimension("wavevector dimension".into()));
            }
            if k.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidParameter("k = 0 is excluded from the estimator".into()));
            }
            Ok(collective_coordinate(cfg, k).norm_sqr() / n)
        })
        .collect()
}

fn check_gap_box(cfg: &PointConfiguration, gap: &GapRegion) -> Result<()> {
    let g = gap.geometry();
    if g.d() != cfg.d() || (g.box_length() - cfg.box_length()).abs() > 1e-12 * cfg.box_length() {
        return Err(Error::Dimension("gap geometry does not match the configuration box".into()));
    }
    Ok(())
}

/// Collective-coordinate energy over the nonzero masked modes.
pub fn collective_energy(cfg: &PointConfiguration, gap: &GapRegion) -> Result<f64> {
    check_gap_box(cfg, gap)?;
    Ok(gap
        .folded_wavevectors()
        .iter()
        .map(|(k, w)| w * collective_coordinate(cfg, k).norm_sqr())
        .sum())
}

/// Energy and its gradient with respect to every coordinate.
pub fn energy_and_gradient(cfg: &PointConfiguration, gap: &GapRegion) -> Result<(f64, Vec<f64>)> {
    check_gap_box(cfg, gap)?;
    let ks = gap.folded_wavevectors();
    let mut grad = vec![0.0; cfg.coords.len()];
    let e = EnergyKernel::new(&ks, cfg.d, gap.geometry().dk()).eval(&cfg.coords, &mut grad);
    Ok((e, grad))
}

struct EnergyKernel {
    modes: Vec<(Vec<i64>, Vec<f64>, f64)>,
    d: usize,
    dk: f64,
    reach: Vec<i64>,
    table: Vec<Complex64>,
}

impl EnergyKernel {
    fn new(ks: &[(Vec<f64>, f64)], d: usize, dk: f64) -> Self {
        let modes: Vec<(Vec<i64>, Vec<f64>, f64)> = ks
            .iter()
            .map(|(k, w)| (k.iter().map(|v| (v / dk).round() as i64).collect(), k.clone(), *w))
            .collect();
        let reach = (0..d)
            .map(|a| modes.iter().map(|m| m.0[a].abs()).max().unwrap_or(0))
            .collect();
        Self { modes, d, dk, reach, table: Vec::new() }
    }

    /// Fills `exp(-i j dk x)` for every point, axis and `|j| <= reach`.
    fn fill(&mut self, coords: &[f64]) {
        let n = coords.len() / self.d;
        let width: usize = self.reach.iter().map(|&r| 2 * r as usize + 1).sum();
        self.table.resize(n * width, Complex64::new(0.0, 0.0));
        for (p, x) in coords.chunks_exact(self.d).enumerate() {
            let mut offset = p * width;
            for (a, &r) in self.reach.iter().enumerate() {
                let row = &mut self.table[offset..offset + 2 * r as usize + 1];
                let r = r as usize;
                row[r] = Complex64::new(1.0, 0.0);
                let base = Complex64::from_polar(1.0, -self.dk * x[a]);
                let mut cur = Complex64::new(1.0, 0.0);
                for j in 1..=r {
                    // refresh from sin_cos now and then to keep rounding flat
                    cur = if j % 16 == 0 {
                        Complex64::from_polar(1.0, -self.dk * x[a] * j as f64)
                    } else {
                        cur * base
                    };
                    row[r + j] = cur;
                    row[r - j] = cur.conj();
                }
                offset += 2 * r + 1;
            }
        }
    }

    /// Energy of the flat coordinates and its full gradient.
    fn eval(&mut self, coords: &[f64], grad: &mut [f64]) -> f64 {
        let n = coords.len() / self.d;
        self.fill(coords);
        let width: usize = self.reach.iter().map(|&r| 2 * r as usize + 1).sum();
        let mut starts = Vec::with_capacity(self.d);
        let mut acc = 0;
        for &r in &self.reach {
            starts.push(acc + r as usize);
            acc += 2 * r as usize + 1;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut phases = vec![Complex64::new(0.0, 0.0); n];
        let mut energy = 0.0;
        for (j, k, w) in &self.modes {
            let cols: Vec<usize> = j.iter().zip(&starts).map(|(&ja, &s)| (s as i64 + ja) as usize).collect();
            let mut rho = Complex64::new(0.0, 0.0);
            for (p, e) in phases.iter_mut().enumerate() {
                let row = &self.table[p * width..];
                let mut v = row[cols[0]];
                for &c in &cols[1..] {
                    v *= row[c];
                }
                *e = v;
                rho += v;
            }
            energy += w * rho.norm_sqr();
            let rc = rho.conj();
            for (p, e) in phases.iter().enumerate() {
                let im = (rc * e).im * 2.0 * w;
                for (a, ka) in k.iter().enumerate() {
                    grad[p * self.d + a] += im * ka;
                }
            }
        }
        energy
    }
}

/// Builder for stealthy ground states.
#[derive(Debug, Clone)]
pub struct StealthyGenerator {
    n_points: usize,
    gap: GapRegion,
    tolerance: Option<f64>,
    pinned: Vec<Vec<f64>>,
    exclusions: Vec<(Vec<f64>, f64)>,
    max_restarts: usize,
    max_iterations: usize,
    polish: Option<f64>,
}

impl StealthyGenerator {
    /// `n_points` counts every point, pinned ones included.
    pub fn new(n_points: usize, gap: GapRegion) -> Self {
        Self {
            n_points,
            gap,
            tolerance: None,
            pinned: Vec::new(),
            exclusions: Vec::new(),
            max_restarts: 20,
            max_iterations: 4000,
            polish: None,
        }
    }

    /// Energy threshold for the certificate; defaults to `1e-12 N^2`.
    pub fn tolerance(mut self, tol: f64) -> Self {
        self.tolerance = Some(tol);
        self
    }

    /// Points held fixed during minimization.
    pub fn pinned(mut self, points: Vec<Vec<f64>>) -> Self {
        self.pinned = points;
        self
    }

    /// Keeps every free point at distance at least `radius` from `center`.
    /// Repeated calls add further balls.
    pub fn exclusion(mut self, center: Vec<f64>, radius: f64) -> Self {
        self.exclusions.push((center, radius));
        self
    }

    /// Energy the minimizer keeps polishing towards; defaults to `1e-24 N^2`.
    pub fn polish(mut self, target: f64) -> Self {
        self.polish = Some(target);
        self
    }

    pub fn max_restarts(mut self, r: usize) -> Self {
        self.max_restarts = r;
        self
    }

    pub fn max_iterations(mut self, it: usize) -> Self {
        self.max_iterations = it;
        self
    }

    fn check(&self) -> Result<usize> {
        let g = self.gap.geometry();
        let d = g.d();
        if self.pinned.len() > self.n_points {
            return Err(Error::InvalidParameter("more pinned points than points".into()));
        }
        if self.pinned.iter().any(|p| p.len() != d) {
            return Err(Error::Dimension("pinned point dimension".into()));
        }
        if self.gap.touches_nyquist() {
            return Err(Error::Precondition(
                "gap reaches the Nyquist planes of its grid; use a finer grid for point gaps".into(),
            ));
        }
        let constraints = count_constraints(&self.gap).real - usize::from(self.gap.contains_origin());
        let free = self.n_points - self.pinned.len();
        if constraints >= d * free {
            return Err(Error::Precondition(format!(
                "{constraints} real constraints against {} free coordinates",
                d * free
            )));
        }
        Ok(free)
    }

    pub fn generate(&self, seed: u64) -> Result<PointConfiguration> {
        let free = self.check()?;
        let g = *self.gap.geometry();
        let d = g.d();
        let l = g.box_length();
        let n = self.n_points as f64;
        let tol = self.tolerance.unwrap_or(1e-12 * n * n);
        let ks = self.gap.folded_wavevectors();
        let pinned_flat: Vec<f64> = self.pinned.concat();
        let penalty_weight = n;
        let mut best_energy = f64::INFINITY;
        let mut total_iterations = 0;

        for restart in 0..self.max_restarts {
            let mut rng = stream_rng(seed, restart as u64);
            let mut x0 = Vec::with_capacity(free * d);
            if d == 1 && !self.exclusions.is_empty() {
                // walls cannot be crossed on a line, so fill the gaps between them evenly
                let allowed = allowed_intervals(&self.exclusions, l);
                let total: f64 = allowed.iter().map(|(a, b)| b - a).sum();
                for i in 0..free {
                    let mut u = (i as f64 + rng.random::<f64>()) / free as f64 * total;
                    for (a, b) in &allowed {
                        if u < b - a {
                            x0.push(a + u);
                            break;
                        }
                        u -= b - a;
                    }
                }
                x0.resize(free, 0.0);
            }
            while x0.len() < free * d {
                let p: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * l).collect();
                if self.exclusions.iter().any(|(c, r)| dist(&p, c, l) < *r) {
                    continue;
                }
                x0.extend(p);
            }

            let mut kernel = EnergyKernel::new(&ks, d, g.dk());
            let mut all = vec![0.0; pinned_flat.len() + free * d];
            let mut all_grad = vec![0.0; all.len()];
            let exclusions = self.exclusions.clone();
            let pinned_len = pinned_flat.len();
            all[..pinned_len].copy_from_slice(&pinned_flat);
            let objective = |x: &[f64], grad: &mut [f64]| -> f64 {
                all[pinned_len..].copy_from_slice(x);
                let mut e = kernel.eval(&all, &mut all_grad);
                grad.copy_from_slice(&all_grad[pinned_len..]);
                for (c, r) in &exclusions {
                    for (p, gp) in x.chunks_exact(d).zip(grad.chunks_exact_mut(d)) {
                        let delta: Vec<f64> = p.iter().zip(c).map(|(a, b)| min_image(a - b, l)).collect();
                        let dd = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if dd < *r {
                            let over = r - dd;
                            e += penalty_weight * over * over;
                            let scale = if dd > 0.0 { -2.0 * penalty_weight * over / dd } else { 0.0 };
                            for (ga, da) in gp.iter_mut().zip(&delta) {
                                *ga += scale * da;
                            }
                        }
                    }
                }
                e
            };
            let out = lbfgs::minimize(
                objective,
                x0,
                LbfgsOptions {
                    memory: 8,
                    max_iterations: self.max_iterations,
                    f_target: self.polish.unwrap_or(1e-24 * n * n),
                    gtol: 0.0,
                },
            );
            total_iterations += out.iterations;

            let mut flat = pinned_flat.clone();
            flat.extend_from_slice(&out.x);
            let cfg = PointConfiguration::from_flat(d, l, flat)?;
            let excluded_ok = self
                .exclusions
                .iter()
                .all(|(c, r)| (self.pinned.len()..cfg.len()).all(|i| dist(cfg.point(i), c, l) >= r - 1e-9));
            let energy = collective_energy(&cfg, &self.gap)?;
            best_energy = best_energy.min(if excluded_ok { energy } else { out.f.max(energy) });
            if excluded_ok && energy <= tol {
                let cert = StealthCertificate {
                    gap: self.gap.clone(),
                    energy,
                    tolerance: tol,
                    gap_radius: gap_radius(&self.gap).ok(),
                    iterations: total_iterations,
                    restarts: restart,
                };
                return Ok(cfg.with_certificate(Some(cert)));
            }
        }
        Err(Error::NonConvergence { best_energy })
    }
}

/// Complement in `[0, L)` of the union of the exclusion intervals.
fn allowed_intervals(exclusions: &[(Vec<f64>, f64)], l: f64) -> Vec<(f64, f64)> {
    let mut banned: Vec<(f64, f64)> = Vec::new();
    for (c, r) in exclusions {
        let lo = (c[0] - r).rem_euclid(l);
        let hi = lo + 2.0 * r;
        if 2.0 * r >= l {
            return Vec::new();
        }
        if hi > l {
            banned.push((lo, l));
            banned.push((0.0, hi - l));
        } else {
            banned.push((lo, hi));
        }
    }
    banned.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut cursor = 0.0;
    for (a, b) in banned {
        if a > cursor {
            out.push((cursor, a));
        }
        cursor = f64::max(cursor, b);
    }
    if cursor < l {
        out.push((cursor, l));
    }
    out
}

fn dist(p: &[f64], c: &[f64], l: f64) -> f64 {
    p.iter()
        .zip(c)
        .map(|(a, b)| min_image(a - b, l).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Convenience wrapper: `n_points` free points in the gap's box.
pub fn generate_stealthy(n_points: usize, gap: &GapRegion, seed: u64) -> Result<PointConfiguration> {
    StealthyGenerator::new(n_points, gap.clone()).generate(seed)
}

/// Simple cubic lattice with `n` points per axis plus i.i.d. uniform jitter in
/// `[-amplitude, amplitude]` per coordinate. When a gap is given the result is
/// certified against `1e-12 N^2` if it qualifies.
pub fn perturbed_lattice(
    d: usize,
    n: usize,
    box_length: f64,
    amplitude: f64,
    gap: Option<&GapRegion>,
    seed: u64,
) -> Result<PointConfiguration> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidParameter(format!("amplitude {amplitude}")));
    }
    let geometry = TorusGeometry::new(d, n, box_length)?;
    let mut rng = stream_rng(seed, 0);
    let mut coords = Vec::with_capacity(geometry.len() * d);
    for i in 0..geometry.len() {
        for x in geometry.site_position(i) {
            let jitter = if amplitude > 0.0 {
                (2.0 * rng.random::<f64>() - 1.0) * amplitude
            } else {
                0.0
            };
            coords.push(x + jitter);
        }
    }
    let cfg = PointConfiguration::from_flat(d, box_length, coords)?;
    match gap {
        Some(gap) => {
            let total = cfg.len() as f64;
            cfg.certify(gap, 1e-12 * total * total)
        }
        None => Ok(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn lattice_has_zero_structure_factor_off_bragg() {
        let n = 16;
        let cfg = perturbed_lattice(1, n, n as f64, 0.0, None, 0).unwrap();
        let modes: Vec<Vec<f64>> = (1..n).map(|j| vec![2.0 * PI * j as f64 / n as f64]).collect();
        for s in structure_factor(&cfg, &modes).unwrap() {
            assert!(s < 1e-24);
        }
    }

    #[test]
    fn single_point_factor_is_one() {
        let cfg = PointConfiguration::new(2, 3.0, &[vec![0.3, 1.7]]).unwrap();
        let s = structure_factor(&cfg, &[vec![1.0, 2.0], vec![-0.4, 0.0]]).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let empty = PointConfiguration::new(2, 3.0, &[]).unwrap();
        assert!(matches!(structure_factor(&empty, &[vec![1.0, 0.0]]), Err(Error::EmptyConfiguration)));
    }

    #[test]
    fn wrapping_large_jitter() {
        let cfg = perturbed_lattice(1, 8, 8.0, 20.0, None, 3).unwrap();
        assert!(cfg.coords().iter().all(|&x| (0.0..8.0).contains(&x)));
    }

    #[test]
    fn generates_small_stealthy() {
        let gap = GapRegion::ball_for_points(1, 32.0, 0.5).unwrap();
        let cfg = generate_stealthy(32, &gap, 1).unwrap();
        let cert = cfg.certificate().unwrap();
        assert!(cert.energy <= 1e-12 * 32.0 * 32.0);
        let ks: Vec<Vec<f64>> = gap.half_modes().iter().map(|&m| gap.geometry().wavevector(m)).collect();
        assert!(structure_factor(&cfg, &ks).unwrap().iter().all(|&s| s <= 1e-12));
    }

    #[test]
    fn overconstrained_rejected() {
        let gap = GapRegion::ball_for_points(1, 8.0, 6.0).unwrap();
        assert!(matches!(generate_stealthy(4, &gap, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn csv_round_trip() {
        let gap = GapRegion::ball_for_points(1, 16.0, 0.9).unwrap();
        let cfg = generate_stealthy(16, &gap, 4).unwrap();
        let mut buf = Vec::new();
        cfg.write_csv(&mut buf).unwrap();
        let back = PointConfiguration::read_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 16);
        for (a, b) in back.coords().iter().zip(cfg.coords()) {
            assert_eq!(a, b);
        }
        assert_eq!(back.certificate().unwrap().gap, gap);
    }
}

//! Structure functions on the mode grid, their gap regions and classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::TorusGeometry;

/// Shape of a gap region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GapKind {
    /// Open ball `|k| < radius` around the origin.
    Ball { radius: f64 },
    /// Open cube of the given half-width around `center`, together with its mirror at `-center`.
    ShiftedCube { center: Vec<f64>, half_width: f64 },
    /// Arbitrary list of mode indices (must be closed under negation).
    Explicit { modes: Vec<usize> },
}

#[derive(Serialize, Deserialize)]
struct GapDoc {
    geometry: TorusGeometry,
    #[serde(flatten)]
    kind: GapKind,
}

/// Set of modes where the structure function vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GapDoc", try_from = "GapDoc")]
pub struct GapRegion {
    geometry: TorusGeometry,
    kind: GapKind,
    mask: Vec<bool>,
}

impl From<GapRegion> for GapDoc {
    fn from(g: GapRegion) -> Self {
        GapDoc {
            geometry: g.geometry,
            kind: g.kind,
        }
    }
}

impl TryFrom<GapDoc> for GapRegion {
    type Error = Error;
    fn try_from(doc: GapDoc) -> Result<Self> {
        GapRegion::new(doc.geometry, doc.kind)
    }
}

impl GapRegion {
    pub fn new(geometry: TorusGeometry, kind: GapKind) -> Result<Self> {
        let mask = match &kind {
            GapKind::Ball { radius } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(Error::InvalidParameter(format!("gap radius {radius}")));
                }
                (0..geometry.len())
                    .map(|i| geometry.wavenumber(i) < *radius)
                    .collect()
            }
            GapKind::ShiftedCube { center, half_width } => {
                if center.len() != geometry.d() {
                    return Err(Error::Dimension(format!(
                        "cube center has {} components, geometry has d = {}",
                        center.len(),
                        geometry.d()
                    )));
                }
                if !(half_width.is_finite() && *half_width >= 0.0) {
                    return Err(Error::InvalidParameter(format!("half width {half_width}")));
                }
                (0..geometry.len())
                    .map(|i| {
                        let k = geometry.wavevector(i);
                        let within = |sign: f64| {
                            k.iter()
                                .zip(center)
                                .all(|(ki, ci)| (ki - sign * ci).abs() < *half_width)
                        };
                        within(1.0) || within(-1.0)
                    })
                    .collect()
            }
            GapKind::Explicit { modes } => {
                let mut mask = vec![false; geometry.len()];
                for &m in modes {
                    if m >= geometry.len() {
                        return Err(Error::InvalidParameter(format!("mode index {m} out of range")));
                    }
                    mask[m] = true;
                }
                for (i, &on) in mask.iter().enumerate() {
                    if on && !mask[geometry.negate(i)] {
                        return Err(Error::InvalidParameter(format!(
                            "explicit gap is not symmetric: mode {i} present, its negation absent"
                        )));
                    }
                }
                mask
            }
        };
        Ok(Self {
            geometry,
            kind,
            mask,
        })
    }

    pub fn ball(geometry: TorusGeometry, radius: f64) -> Result<Self> {
        Self::new(geometry, GapKind::Ball { radius })
    }

    pub fn shifted_cube(geometry: TorusGeometry, center: Vec<f64>, half_width: f64) -> Result<Self> {
        Self::new(geometry, GapKind::ShiftedCube { center, half_width })
    }

    pub fn explicit(geometry: TorusGeometry, modes: Vec<usize>) -> Result<Self> {
        Self::new(geometry, GapKind::Explicit { modes })
    }

    /// Ball gap on a grid fine enough that the ball stays clear of the Nyquist planes.
    pub fn ball_for_points(d: usize, box_length: f64, radius: f64) -> Result<Self> {
        let reach = (radius * box_length / (2.0 * std::f64::consts::PI)).ceil() as usize;
        let n = 2 * reach + 4;
        Self::ball(TorusGeometry::new(d, n, box_length)?, radius)
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geometry
    }

    pub fn kind(&self) -> &GapKind {
        &self.kind
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, mode: usize) -> bool {
        self.mask[mode]
    }

    /// Masked mode indices in storage order.
    pub fn modes(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_origin(&self) -> bool {
        self.mask[0]
    }

    pub fn touches_nyquist(&self) -> bool {
        self.modes().any(|i| self.geometry.is_nyquist(i))
    }

    /// One representative of each masked `{k, -k}` pair (self-conjugate modes included), origin excluded.
    pub fn half_modes(&self) -> Vec<usize> {
        self.modes()
            .filter(|&i| i != 0 && i <= self.geometry.negate(i))
            .collect()
    }

    /// Masked wavevectors as `(k, multiplicity)` with `k` and `-k` folded together, origin excluded.
    pub fn folded_wavevectors(&self) -> Vec<(Vec<f64>, f64)> {
        self.half_modes()
            .into_iter()
            .map(|i| {
                let w = if self.geometry.is_self_conjugate(i) { 1.0 } else { 2.0 };
                (self.geometry.wavevector(i), w)
            })
            .collect()
    }
}

/// Real-valued constraint count of a gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCount {
    pub modes: usize,
    pub self_conjugate: usize,
    /// Real equations `xi_hat(k) = 0` imposes on a real field.
    pub real: usize,
}

pub fn count_constraints(gap: &GapRegion) -> ConstraintCount {
    let modes = gap.len();
    let self_conjugate = gap
        .modes()
        .filter(|&i| gap.geometry.is_self_conjugate(i))
        .count();
    // a self-conjugate mode gives one real equation, a +/- pair gives two
    ConstraintCount {
        modes,
        self_conjugate,
        real: self_conjugate + (modes - self_conjugate),
    }
}

/// Smallest wavenumber outside the gap. With every mode masked this is the
/// largest representable wavenumber `pi*n/L`.
pub fn gap_radius(gap: &GapRegion) -> Result<f64> {
    if !gap.contains_origin() {
        return Err(Error::NotStealthy);
    }
    let g = &gap.geometry;
    Ok((0..g.len())
        .filter(|&i| !gap.mask[i])
        .map(|i| g.wavenumber(i))
        .fold(g.nyquist(), f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessClass {
    Stealthy,
    GeneralizedStealthy,
    Hyperuniform,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub class: ProcessClass,
    pub touches_nyquist: bool,
}

pub fn classify_gap(gap: &GapRegion) -> Classification {
    let class = if gap.contains_origin() {
        let radius = gap_radius(gap).unwrap_or(0.0);
        let first_shell = gap.geometry.dk();
        let nonzero = gap.geometry.len() > 1;
        if nonzero && radius > first_shell * (1.0 + 1e-12) {
            ProcessClass::Stealthy
        } else {
            ProcessClass::Hyperuniform
        }
    } else if gap.is_empty() {
        ProcessClass::None
    } else {
        ProcessClass::GeneralizedStealthy
    };
    Classification {
        class,
        touches_nyquist: gap.touches_nyquist(),
    }
}

/// Parametric families with a closed-form structure function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "parameters", rename_all = "snake_case")]
pub enum Family {
    /// Zero inside the ball `|k| < b`, one outside.
    StealthyFlat { b: f64 },
    /// Zero on a mirrored pair of cubes, one elsewhere.
    GsShiftedCube { center: Vec<f64>, half_width: f64 },
    /// `exp(-|k|^-p)` below the cutoff, flat above it.
    FastDecay { exponent: f64, cutoff: f64 },
    /// `|k|^alpha` below the cutoff, flat above it.
    PowerLaw { exponent: f64, cutoff: f64 },
    /// Unit peaks on the nonzero reciprocal vectors of a sublattice with the given period in sites.
    BraggLattice { period: usize },
    /// The same value on every mode.
    Constant { value: f64 },
    /// Values supplied directly.
    Explicit,
}

#[derive(Serialize, Deserialize)]
struct StructureDoc {
    geometry: TorusGeometry,
    #[serde(flatten)]
    family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

/// Nonnegative, symmetric spectral density on a mode grid together with its gap.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureFunction {
    geometry: TorusGeometry,
    family: Family,
    values: Vec<f64>,
    gap: GapRegion,
}

/// Profile of the fast-decay family as a function of `|k|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastDecayProfile {
    pub exponent: f64,
    pub cutoff: f64,
}

/// Outcome of checking super-polynomial vanishing of a fast-decay profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate {
    /// `(m, lo, hi)`: the ratio `S/|k|^m` was checked increasing on `[lo, hi]`.
    pub intervals: Vec<(u32, f64, f64)>,
    pub pass: bool,
}

impl FastDecayProfile {
    pub fn new(exponent: f64, cutoff: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite() && cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "fast decay needs positive exponent and cutoff, got {exponent}, {cutoff}"
            )));
        }
        Ok(Self { exponent, cutoff })
    }

    pub fn value(&self, k: f64) -> f64 {
        if k <= 0.0 {
            0.0
        } else {
            (-1.0 / k.min(self.cutoff).powf(self.exponent)).exp()
        }
    }

    /// Checks on a fine grid that `S(k)/k^m` increases for each `m <= m_max`,
    /// on `[0.05, min(0.5, (p/m)^(1/p), cutoff)]` where that ratio is monotone.
    pub fn certify(&self, m_max: u32) -> DecayCertificate {
        let p = self.exponent;
        let mut intervals = Vec::new();
        let mut pass = true;
        for m in 1..=m_max {
            let turn = (p / m as f64).powf(1.0 / p);
            let hi = 0.5_f64.min(turn).min(self.cutoff);
            let lo = 0.05_f64;
            if hi <= lo {
                continue;
            }
            let steps = 400;
            // log of the ratio avoids underflow near the left end
            let log_ratio = |k: f64| -1.0 / k.powf(p) - m as f64 * k.ln();
            let mut prev = log_ratio(lo);
            for s in 1..=steps {
                let k = lo + (hi - lo) * s as f64 / steps as f64;
                let cur = log_ratio(k);
                if cur < prev {
                    pass = false;
                }
                prev = cur;
            }
            intervals.push((m, lo, hi));
        }
        DecayCertificate { intervals, pass }
    }

    pub fn structure_function(&self, geometry: TorusGeometry) -> Result<StructureFunction> {
        StructureFunction::fast_decay(geometry, self.exponent, self.cutoff)
    }
}

impl StructureFunction {
    /// Validates values against a gap: finite, nonnegative, symmetric and zero on the gap.
    pub fn with_gap(
        geometry: TorusGeometry,
        family: Family,
        values: Vec<f64>,
        gap: GapRegion,
    ) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::Dimension(format!(
                "structure function has {} values, geometry has {} modes",
                values.len(),
                geometry.len()
            )));
        }
        if gap.geometry != geometry {
            return Err(Error::Dimension("gap geometry differs from structure function".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("S at mode {i} is {v}")));
            }
            let w = values[geometry.negate(i)];
            if (v - w).abs() > 1e-12 * v.abs().max(w.abs()) {
                return Err(Error::InvalidParameter(format!("S is not symmetric at mode {i}")));
            }
            if gap.mask[i] && v != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "S at gap mode {i} is {v}, expected exactly zero"
                )));
            }
        }
        Ok(Self {
            geometry,
            family,
            values,
            gap,
        })
    }

    /// Explicit values; the gap is their zero set.
    pub fn from_values(geometry: TorusGeometry, values: Vec<f64>) -> Result<Self> {
        Self::from_values_with_family(geometry, values, Family::Explicit)
    }

    fn from_values_with_family(geometry: TorusGeometry, values: Vec<f64>, family: Family) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::Dimension(format!(
                "structure function has {} values, geometry has {} modes",
                values.len(),
                geometry.len()
            )));
        }
        let modes = values
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v == 0.0).then_some(i))
            .collect();
        let gap = GapRegion::explicit(geometry, modes)?;
        Self::with_gap(geometry, family, values, gap)
    }

    fn from_gap(gap: GapRegion, family: Family) -> Result<Self> {
        let values = gap.mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
        Self::with_gap(gap.geometry, family, values, gap)
    }

    pub fn stealthy_flat(geometry: TorusGeometry, b: f64) -> Result<Self> {
        Self::from_gap(GapRegion::ball(geometry, b)?, Family::StealthyFlat { b })
    }

    pub fn gs_shifted_cube(geometry: TorusGeometry, center: Vec<f64>, half_width: f64) -> Result<Self> {
        let gap = GapRegion::shifted_cube(geometry, center.clone(), half_width)?;
        Self::from_gap(gap, Family::GsShiftedCube { center, half_width })
    }

    /// Only the origin is in the gap; values may underflow to zero near it.
    pub fn fast_decay(geometry: TorusGeometry, exponent: f64, cutoff: f64) -> Result<Self> {
        let profile = FastDecayProfile::new(exponent, cutoff)?;
        let values = (0..geometry.len())
            .map(|i| profile.value(geometry.wavenumber(i)))
            .collect();
        let gap = GapRegion::explicit(geometry, vec![0])?;
        Self::with_gap(geometry, Family::FastDecay { exponent, cutoff }, values, gap)
    }

    pub fn power_law(geometry: TorusGeometry, exponent: f64, cutoff: f64) -> Result<Self> {
        if !(exponent > 0.0 && cutoff > 0.0) {
            return Err(Error::InvalidParameter("power law needs positive exponent and cutoff".into()));
        }
        let values = (0..geometry.len())
            .map(|i| geometry.wavenumber(i).min(cutoff).powf(exponent))
            .collect();
        let gap = GapRegion::explicit(geometry, vec![0])?;
        Self::with_gap(geometry, Family::PowerLaw { exponent, cutoff }, values, gap)
    }

    pub fn bragg_lattice(geometry: TorusGeometry, period: usize) -> Result<Self> {
        let n = geometry.n();
        if period < 2 || n % period != 0 {
            return Err(Error::InvalidParameter(format!(
                "period {period} must be at least 2 and divide n = {n}"
            )));
        }
        let step = (n / period) as i64;
        let values = (0..geometry.len())
            .map(|i| {
                let j = geometry.signed_indices(i);
                let on = i != 0 && j.iter().all(|x| x.rem_euclid(step) == 0);
                if on { 1.0 } else { 0.0 }
            })
            .collect();
        Self::from_values_with_family(geometry, values, Family::BraggLattice { period })
    }

    pub fn constant(geometry: TorusGeometry, value: f64) -> Result<Self> {
        Self::from_values_with_family(geometry, vec![value; geometry.len()], Family::Constant { value })
    }

    pub fn from_family(geometry: TorusGeometry, family: &Family, values: Option<Vec<f64>>) -> Result<Self> {
        match family {
            Family::StealthyFlat { b } => Self::stealthy_flat(geometry, *b),
            Family::GsShiftedCube { center, half_width } => {
                Self::gs_shifted_cube(geometry, center.clone(), *half_width)
            }
            Family::FastDecay { exponent, cutoff } => Self::fast_decay(geometry, *exponent, *cutoff),
            Family::PowerLaw { exponent, cutoff } => Self::power_law(geometry, *exponent, *cutoff),
            Family::BraggLattice { period } => Self::bragg_lattice(geometry, *period),
            Family::Constant { value } => Self::constant(geometry, *value),
            Family::Explicit => Self::from_values(
                geometry,
                values.ok_or_else(|| Error::Parse("explicit family needs values".into()))?,
            ),
        }
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geometry
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, mode: usize) -> f64 {
        self.values[mode]
    }

    pub fn gap(&self) -> &GapRegion {
        &self.gap
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn classify(&self) -> Classification {
        classify_gap(&self.gap)
    }

    pub fn to_json(&self) -> Result<String> {
        let values = matches!(self.family, Family::Explicit).then(|| self.values.clone());
        let doc = StructureDoc {
            geometry: self.geometry,
            family: self.family.clone(),
            values,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StructureDoc = serde_json::from_str(text)?;
        Self::from_family(doc.geometry, &doc.family, doc.values)
    }
}

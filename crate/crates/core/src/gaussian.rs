//! Stationary Gaussian fields with a prescribed structure function.
//!
//! A realization is synthesized mode by mode, `xi_hat(k) = sqrt(S(k)) g_k`, with
//! `g_{-k} = conj(g_k)`, and transformed back with the factor `n^{d/2}` so that
//! `E[xi(x) xi(y)] = n^-d sum_k S(k) exp(i k.(x-y))`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{forward_real, inverse_dft, LatticeArray, Space, TorusGeometry};
use crate::rng::NormalStream;
use crate::structure::{count_constraints, GapRegion, StructureFunction};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub structure: StructureFunction,
    pub seed: u64,
}

impl GaussianSpec {
    pub fn new(structure: StructureFunction, seed: u64) -> Self {
        Self { structure, seed }
    }
}

/// One sampled field on the lattice sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRealization {
    pub geometry: TorusGeometry,
    pub seed: u64,
    pub index: u64,
    pub values: Vec<f64>,
}

/// Spectral amplitudes of realization `index`.
pub fn sample_spectrum(spec: &GaussianSpec, index: u64) -> Vec<Complex64> {
    let s = &spec.structure;
    let g = s.geometry();
    let mut stream = NormalStream::new(spec.seed, index);
    let mut out = vec![Complex64::new(0.0, 0.0); g.len()];
    for mode in 0..g.len() {
        let partner = g.negate(mode);
        if partner < mode {
            continue;
        }
        let amp = s.value(mode).sqrt();
        if amp == 0.0 {
            continue;
        }
        let (z1, z2) = stream.pair(mode as u64);
        if partner == mode {
            out[mode] = Complex64::new(amp * z1, 0.0);
        } else {
            let c = Complex64::new(z1, z2) * (amp * std::f64::consts::FRAC_1_SQRT_2);
            out[mode] = c;
            out[partner] = c.conj();
        }
    }
    out
}

/// Realization `index` of the ensemble.
pub fn sample_one(spec: &GaussianSpec, index: u64) -> Result<FieldRealization> {
    let g = *spec.structure.geometry();
    let spectrum = LatticeArray::new(g, Space::Wave, sample_spectrum(spec, index))?;
    let phys = inverse_dft(&spectrum)?;
    let scale = (g.len() as f64).sqrt();
    Ok(FieldRealization {
        geometry: g,
        seed: spec.seed,
        index,
        values: phys.values.iter().map(|v| v.re * scale).collect(),
    })
}

/// Realizations `0..count`, identical for any thread count.
pub fn sample_field(spec: &GaussianSpec, count: usize) -> Result<Vec<FieldRealization>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample_one(spec, i))
        .collect()
}

impl FieldRealization {
    /// Normalized spectrum `n^{-d/2} sum_x xi(x) exp(-i k.x)`.
    pub fn spectrum(&self) -> Result<Vec<Complex64>> {
        let scale = 1.0 / (self.geometry.len() as f64).sqrt();
        Ok(forward_real(&self.geometry, &self.values)?
            .into_iter()
            .map(|v| v * scale)
            .collect())
    }

    /// Largest unnormalized DFT magnitude over the gap modes.
    pub fn gap_residual(&self, gap: &GapRegion) -> Result<f64> {
        let f = forward_real(&self.geometry, &self.values)?;
        Ok(gap.modes().map(|m| f[m].norm()).fold(0.0, f64::max))
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(&(self.geometry.d() as u32).to_le_bytes())?;
        w.write_all(&(self.geometry.n() as u32).to_le_bytes())?;
        w.write_all(&self.geometry.box_length().to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.index.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let box_length = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let index = u64::from_le_bytes(b8);
        let geometry = TorusGeometry::new(d, n, box_length)?;
        let mut values = Vec::with_capacity(geometry.len());
        for _ in 0..geometry.len() {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Ok(Self {
            geometry,
            seed,
            index,
            values,
        })
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        self.write_binary(std::fs::File::create(path)?)
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        Self::read_binary(std::fs::File::open(path)?)
    }

    /// CSV with one comment header line and one value per row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(
            w,
            "# d={} n={} box_length={:e} seed={} index={}",
            self.geometry.d(),
            self.geometry.n(),
            self.geometry.box_length(),
            self.seed,
            self.index
        )?;
        writeln!(w, "value")?;
        for v in &self.values {
            writeln!(w, "{v:e}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty field file".into()))??;
        let kv = parse_header(&header)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Parse(format!("missing header key {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("bad header value for {k}")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("bad header value for {k}")))
        };
        let geometry = TorusGeometry::new(int("d")? as usize, int("n")? as usize, num("box_length")?)?;
        let mut values = Vec::with_capacity(geometry.len());
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t == "value" {
                continue;
            }
            values.push(t.parse().map_err(|_| Error::Parse(format!("bad value {t}")))?);
        }
        if values.len() != geometry.len() {
            return Err(Error::Dimension(format!(
                "field file has {} values, expected {}",
                values.len(),
                geometry.len()
            )));
        }
        Ok(Self {
            geometry,
            seed: int("seed")?,
            index: int("index")?,
            values,
        })
    }
}

pub(crate) fn parse_header(line: &str) -> Result<Vec<(String, String)>> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("missing '#' header line".into()))?;
    body.split_whitespace()
        .skip_while(|t| !t.contains('='))
        .map(|t| {
            t.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Parse(format!("bad header token {t}")))
        })
        .collect()
}

/// Covariance `C(r)` at every lattice displacement `r` (site index).
pub fn covariance(structure: &StructureFunction) -> Result<Vec<f64>> {
    let g = *structure.geometry();
    let spectrum = LatticeArray::from_real(g, Space::Wave, structure.values())?;
    Ok(inverse_dft(&spectrum)?.values.iter().map(|v| v.re).collect())
}

/// Dimension count of the Gaussian law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degeneracy {
    pub sites: usize,
    pub constraints: usize,
    /// Rank of the covariance, `n^d - constraints`.
    pub rank: usize,
}

pub fn degeneracy_rank(structure: &StructureFunction) -> Degeneracy {
    let sites = structure.geometry().len();
    let constraints = count_constraints(structure.gap()).real;
    Degeneracy {
        sites,
        constraints,
        rank: sites - constraints,
    }
}

/// Sample covariance matrix over sites (mean assumed zero).
pub fn empirical_covariance(fields: &[FieldRealization]) -> Result<DMatrix<f64>> {
    let first = fields.first().ok_or_else(|| Error::InvalidParameter("no realizations".into()))?;
    let m = first.values.len();
    let data = DMatrix::from_fn(fields.len(), m, |r, c| fields[r].values[c]);
    Ok(data.transpose() * data / fields.len() as f64)
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(matrix: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = matrix.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Ensemble average of `|xi_hat(k)|^2` with the normalized spectrum.
pub fn empirical_mode_power(fields: &[FieldRealization]) -> Result<Vec<f64>> {
    let first = fields.first().ok_or_else(|| Error::InvalidParameter("no realizations".into()))?;
    let mut acc = vec![0.0; first.values.len()];
    for f in fields {
        for (a, v) in acc.iter_mut().zip(f.spectrum()?) {
            *a += v.norm_sqr();
        }
    }
    let m = fields.len() as f64;
    Ok(acc.into_iter().map(|a| a / m).collect())
}

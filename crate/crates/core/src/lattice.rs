//! Periodic lattice geometry and the discrete Fourier transform on it.
//!
//! Sites are stored row-major (first axis slowest). Wave modes share that
//! layout in FFT storage order: storage index `p` on an axis corresponds to the
//! signed index `j = p` for `p < ceil(n/2)` and `j = p - n` otherwise, and the
//! wavevector is `2*pi*j/L`.
//!
//! The forward transform is unnormalized, `a_hat(k) = sum_x a(x) exp(-i k.x)`,
//! and the inverse carries the factor `n^-d`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension, points per axis and physical box length of a periodic lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGeometry {
    d: usize,
    n: usize,
    box_length: f64,
}

impl TorusGeometry {
    pub fn new(d: usize, n: usize, box_length: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("points per axis must be at least 1".into()));
        }
        if !(box_length.is_finite() && box_length > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "box length must be positive and finite, got {box_length}"
            )));
        }
        if (n as f64).powi(d as i32) > 1e9 {
            return Err(Error::InvalidParameter(format!("lattice {n}^{d} is too large")));
        }
        Ok(Self { d, n, box_length })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    /// Lattice spacing `L/n`.
    pub fn spacing(&self) -> f64 {
        self.box_length / self.n as f64
    }

    /// Volume of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Total number of sites (and of modes), `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Fundamental wavenumber `2*pi/L`.
    pub fn dk(&self) -> f64 {
        2.0 * PI / self.box_length
    }

    /// Largest representable wavenumber per axis, `pi*n/L`.
    pub fn nyquist(&self) -> f64 {
        PI * self.n as f64 / self.box_length
    }

    /// Per-axis storage coordinates of a flat index.
    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.d];
        for axis in (0..self.d).rev() {
            out[axis] = index % self.n;
            index /= self.n;
        }
        out
    }

    /// Flat index of per-axis storage coordinates (reduced mod n).
    pub fn index_of(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.n + c % self.n)
    }

    /// Signed frequency index of a storage coordinate.
    pub fn signed(&self, p: usize) -> i64 {
        let half = self.n.div_ceil(2);
        if p < half {
            p as i64
        } else {
            p as i64 - self.n as i64
        }
    }

    /// Signed site offset in the minimal-image convention, same rule as [`Self::signed`].
    pub fn signed_indices(&self, index: usize) -> Vec<i64> {
        self.coords(index).into_iter().map(|p| self.signed(p)).collect()
    }

    /// Flat index of a signed multi-index, reduced mod n.
    pub fn index_of_signed(&self, signed: &[i64]) -> usize {
        let n = self.n as i64;
        signed
            .iter()
            .fold(0, |acc, &j| acc * self.n + j.rem_euclid(n) as usize)
    }

    /// Physical position of a site, `coords * L/n`, in `[0, L)^d`.
    pub fn site_position(&self, index: usize) -> Vec<f64> {
        let h = self.spacing();
        self.coords(index).into_iter().map(|c| c as f64 * h).collect()
    }

    /// Site position in the minimal-image window around the origin.
    pub fn centered_position(&self, index: usize) -> Vec<f64> {
        let h = self.spacing();
        self.signed_indices(index)
            .into_iter()
            .map(|j| j as f64 * h)
            .collect()
    }

    /// Wavevector of a mode.
    pub fn wavevector(&self, index: usize) -> Vec<f64> {
        let dk = self.dk();
        self.signed_indices(index)
            .into_iter()
            .map(|j| j as f64 * dk)
            .collect()
    }

    /// Euclidean norm of the wavevector of a mode.
    pub fn wavenumber(&self, index: usize) -> f64 {
        self.wavevector(index).iter().map(|k| k * k).sum::<f64>().sqrt()
    }

    /// Index of the mode `-k`.
    pub fn negate(&self, index: usize) -> usize {
        let c: Vec<usize> = self
            .coords(index)
            .into_iter()
            .map(|p| (self.n - p) % self.n)
            .collect();
        self.index_of(&c)
    }

    /// True when `-k` and `k` are the same mode (origin and Nyquist corners).
    pub fn is_self_conjugate(&self, index: usize) -> bool {
        self.negate(index) == index
    }

    /// True when some component sits on the Nyquist plane.
    pub fn is_nyquist(&self, index: usize) -> bool {
        self.n % 2 == 0 && self.coords(index).iter().any(|&p| p == self.n / 2)
    }

    /// Phase `k.x` between a mode and a site, computed exactly from integers.
    pub fn phase(&self, mode: usize, site: usize) -> f64 {
        let n = self.n as i64;
        let s: i64 = self
            .coords(mode)
            .into_iter()
            .zip(self.coords(site))
            .map(|(p, q)| p as i64 * q as i64)
            .sum::<i64>()
            .rem_euclid(n);
        2.0 * PI * s as f64 / n as f64
    }
}

/// One entry of the mode grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub index: usize,
    pub signed: Vec<i64>,
    pub wavevector: Vec<f64>,
}

/// All modes of a geometry in storage order.
pub fn mode_grid(geometry: &TorusGeometry) -> Vec<Mode> {
    (0..geometry.len())
        .map(|index| Mode {
            index,
            signed: geometry.signed_indices(index),
            wavevector: geometry.wavevector(index),
        })
        .collect()
}

/// Whether an array holds site values or mode values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Physical,
    Wave,
}

/// Complex values on every site (or mode) of a geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeArray {
    pub geometry: TorusGeometry,
    pub space: Space,
    pub values: Vec<Complex64>,
}

impl LatticeArray {
    pub fn new(geometry: TorusGeometry, space: Space, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::Dimension(format!(
                "expected {} values, got {}",
                geometry.len(),
                values.len()
            )));
        }
        Ok(Self {
            geometry,
            space,
            values,
        })
    }

    pub fn from_real(geometry: TorusGeometry, space: Space, values: &[f64]) -> Result<Self> {
        Self::new(
            geometry,
            space,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn zeros(geometry: TorusGeometry, space: Space) -> Self {
        Self {
            geometry,
            space,
            values: vec![Complex64::new(0.0, 0.0); geometry.len()],
        }
    }
}

fn transform_axes(geometry: &TorusGeometry, data: &mut [Complex64], inverse: bool) {
    let n = geometry.n();
    let d = geometry.d();
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let total = geometry.len();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..total).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[base + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    data[base + i * stride] = *v;
                }
            }
        }
    }
}

/// Unnormalized forward DFT of a physical-space array.
pub fn forward_dft(array: &LatticeArray) -> Result<LatticeArray> {
    if array.space != Space::Physical {
        return Err(Error::InvalidParameter("forward transform expects a physical array".into()));
    }
    let mut values = array.values.clone();
    transform_axes(&array.geometry, &mut values, false);
    Ok(LatticeArray {
        geometry: array.geometry,
        space: Space::Wave,
        values,
    })
}

/// Inverse DFT (with the `n^-d` factor) of a wave-space array.
pub fn inverse_dft(array: &LatticeArray) -> Result<LatticeArray> {
    if array.space != Space::Wave {
        return Err(Error::InvalidParameter("inverse transform expects a wave array".into()));
    }
    let mut values = array.values.clone();
    transform_axes(&array.geometry, &mut values, true);
    let scale = 1.0 / array.geometry.len() as f64;
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(LatticeArray {
        geometry: array.geometry,
        space: Space::Physical,
        values,
    })
}

/// Forward transform of real site values.
pub fn forward_real(geometry: &TorusGeometry, values: &[f64]) -> Result<Vec<Complex64>> {
    let a = LatticeArray::from_real(*geometry, Space::Physical, values)?;
    Ok(forward_dft(&a)?.values)
}

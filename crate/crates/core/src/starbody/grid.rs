//! Angular discretizations of the parameter sphere.
//!
//! * periodic curves (`n = 2`): uniform grid `θ_i = 2πi/N`, trigonometric
//!   interpolation, trapezoidal quadrature;
//! * axisymmetric profiles (`n ≥ 3`): `r(φ) = Σ a_m cos(mφ)` sampled at the
//!   Gauss–Gegenbauer nodes in `x = cos φ` for the weight
//!   `(1 − x²)^{(n−3)/2}`, which is the polar-angle density of `S^{n−1}`.
//!   For `n = 3` these are the Gauss–Legendre nodes.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::special::{gauss_gegenbauer, sphere_measure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PeriodicCurve,
    AxisymmetricProfile,
}

impl Mode {
    pub fn for_dimension(n: usize) -> Mode {
        if n == 2 {
            Mode::PeriodicCurve
        } else {
            Mode::AxisymmetricProfile
        }
    }
}

/// Nodes, quadrature and spectral differentiation for one `(n, N)` pair.
#[derive(Debug)]
pub struct Grid {
    mode: Mode,
    dimension: usize,
    len: usize,
    angles: Vec<f64>,
    cos: Vec<f64>,
    cot: Vec<f64>,
    /// `∫_{S^{n−1}} g dσ ≈ Σ sphere_weights[j] g(θ_j)` for functions of the
    /// polar angle only.
    sphere_weights: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    to_coeffs: Vec<f64>,
    laplacian_bound: f64,
}

static CACHE: Lazy<Mutex<HashMap<(usize, usize), Arc<Grid>>>> = Lazy::new(|| Mutex::new(HashMap::new()));

fn dense_to_vec(m: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Shifts by the first sample so that constants differentiate to exactly zero.
fn centered(values: &[f64]) -> Vec<f64> {
    let shift = values.first().copied().unwrap_or(0.0);
    values.iter().map(|v| v - shift).collect()
}

/// Row-major product; four fixed accumulators keep the summation order
/// deterministic while letting the loop vectorize.
fn matvec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (row, o) in a.chunks_exact(n).zip(out.iter_mut()) {
        let mut acc = [0.0f64; 4];
        let (head, tail) = row.split_at(n - n % 4);
        let (xh, xt) = x.split_at(n - n % 4);
        for (r, v) in head.chunks_exact(4).zip(xh.chunks_exact(4)) {
            for j in 0..4 {
                acc[j] += r[j] * v[j];
            }
        }
        let rest: f64 = tail.iter().zip(xt).map(|(a, b)| a * b).sum();
        *o = (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest;
    }
}

impl Grid {
    /// Shared grid for ambient dimension `n` with `N` nodes.
    pub fn shared(dimension: usize, len: usize) -> Result<Arc<Grid>> {
        let key = (dimension, len);
        if let Some(g) = CACHE.lock().unwrap().get(&key) {
            return Ok(g.clone());
        }
        let grid = Arc::new(Grid::build(dimension, len)?);
        CACHE.lock().unwrap().entry(key).or_insert(grid.clone());
        Ok(grid)
    }

    fn build(dimension: usize, len: usize) -> Result<Grid> {
        ensure!(dimension >= 2, Argument, "ambient dimension must be >= 2, got {dimension}");
        ensure!(len >= 8, Argument, "resolution must be >= 8, got {len}");
        match Mode::for_dimension(dimension) {
            Mode::PeriodicCurve => Self::periodic(len),
            Mode::AxisymmetricProfile => Self::axisymmetric(dimension, len),
        }
    }

    fn periodic(len: usize) -> Result<Grid> {
        ensure!(len % 2 == 0, Argument, "periodic resolution must be even, got {len}");
        let h = 2.0 * PI / len as f64;
        let angles: Vec<f64> = (0..len).map(|i| i as f64 * h).collect();
        let mut d1 = vec![0.0; len * len];
        let mut d2 = vec![0.0; len * len];
        for i in 0..len {
            for j in 0..len {
                if i == j {
                    d2[i * len + j] = -PI * PI / (3.0 * h * h) - 1.0 / 6.0;
                } else {
                    let sign = if (i + len - j) % 2 == 0 { 1.0 } else { -1.0 };
                    let half = (i as f64 - j as f64) * h / 2.0;
                    d1[i * len + j] = 0.5 * sign / half.tan();
                    d2[i * len + j] = -sign / (2.0 * half.sin().powi(2));
                }
            }
        }
        // real DFT: [a_0, a_1, b_1, …, a_{N/2-1}, b_{N/2-1}, a_{N/2}]
        let half = len / 2;
        let mut to_coeffs = vec![0.0; len * len];
        for j in 0..len {
            let th = angles[j];
            to_coeffs[j] = 1.0 / len as f64;
            for m in 1..half {
                let mf = m as f64;
                to_coeffs[(2 * m - 1) * len + j] = 2.0 / len as f64 * (mf * th).cos();
                to_coeffs[(2 * m) * len + j] = 2.0 / len as f64 * (mf * th).sin();
            }
            to_coeffs[(len - 1) * len + j] = (half as f64 * th).cos() / len as f64;
        }
        Ok(Grid {
            mode: Mode::PeriodicCurve,
            dimension: 2,
            len,
            cos: angles.iter().map(|a| a.cos()).collect(),
            cot: vec![0.0; len],
            sphere_weights: vec![h; len],
            angles,
            d1,
            d2,
            to_coeffs,
            laplacian_bound: (half * half) as f64,
        })
    }

    fn axisymmetric(dimension: usize, len: usize) -> Result<Grid> {
        let lambda = (dimension as f64 - 2.0) / 2.0;
        let (x, w) = gauss_gegenbauer(len, lambda)?;
        let angles: Vec<f64> = x.iter().map(|x| x.acos()).collect();
        let omega = sphere_measure(dimension - 2);
        let sphere_weights: Vec<f64> = w.iter().map(|w| w * omega).collect();
        // cosine interpolation: values = C a, C_jm = cos(m φ_j)
        let c = DMatrix::from_fn(len, len, |j, m| (m as f64 * angles[j]).cos());
        let e1 = DMatrix::from_fn(len, len, |j, m| -(m as f64) * (m as f64 * angles[j]).sin());
        let e2 = DMatrix::from_fn(len, len, |j, m| -((m * m) as f64) * (m as f64 * angles[j]).cos());
        let cinv = c
            .try_inverse()
            .ok_or_else(|| Error::Numeric("singular cosine interpolation matrix".into()))?;
        let d1 = &e1 * &cinv;
        let d2 = &e2 * &cinv;
        let m = (len - 1) as f64;
        Ok(Grid {
            mode: Mode::AxisymmetricProfile,
            dimension,
            len,
            cos: x.clone(),
            cot: angles.iter().map(|a| a.cos() / a.sin()).collect(),
            sphere_weights,
            angles,
            d1: dense_to_vec(&d1),
            d2: dense_to_vec(&d2),
            to_coeffs: dense_to_vec(&cinv),
            laplacian_bound: m * (m + dimension as f64 - 2.0),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Polar angles `φ_j` (profiles, increasing) or `θ_i` (curves).
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn cos_angles(&self) -> &[f64] {
        &self.cos
    }

    pub fn cot_angles(&self) -> &[f64] {
        &self.cot
    }

    pub fn sphere_weights(&self) -> &[f64] {
        &self.sphere_weights
    }

    /// Largest magnitude of the discrete Laplace–Beltrami spectrum on the
    /// unit parameter sphere.
    pub fn laplacian_bound(&self) -> f64 {
        self.laplacian_bound
    }

    /// Smallest angular spacing between neighbouring nodes.
    pub fn min_spacing(&self) -> f64 {
        match self.mode {
            Mode::PeriodicCurve => 2.0 * PI / self.len as f64,
            Mode::AxisymmetricProfile => {
                let a = &self.angles;
                let mut m = a[0].min(PI - a[self.len - 1]);
                for p in a.windows(2) {
                    m = m.min(p[1] - p[0]);
                }
                m
            }
        }
    }

    pub fn derivative(&self, values: &[f64], out: &mut [f64]) {
        matvec(&self.d1, &centered(values), out);
    }

    pub fn second_derivative(&self, values: &[f64], out: &mut [f64]) {
        matvec(&self.d2, &centered(values), out);
    }

    /// Series coefficients of the interpolant: cosine coefficients `a_m`
    /// for profiles, `[a_0, a_1, b_1, …, a_{N/2}]` for curves.
    pub fn coefficients(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        matvec(&self.to_coeffs, values, &mut out);
        out
    }

    /// Magnitude of the interpolant's content at each angular frequency.
    pub fn mode_amplitudes(&self, values: &[f64]) -> Vec<f64> {
        let c = self.coefficients(values);
        match self.mode {
            Mode::AxisymmetricProfile => c.iter().map(|x| x.abs()).collect(),
            Mode::PeriodicCurve => {
                let half = self.len / 2;
                let mut out = vec![c[0].abs()];
                for m in 1..half {
                    out.push(c[2 * m - 1].hypot(c[2 * m]));
                }
                out.push(c[self.len - 1].abs());
                out
            }
        }
    }

    /// Evaluates the interpolant at arbitrary angles.
    pub fn evaluate(&self, values: &[f64], at: &[f64]) -> Vec<f64> {
        let shift = values.first().copied().unwrap_or(0.0);
        let c = self.coefficients(&centered(values));
        at.iter()
            .map(|&t| match self.mode {
                Mode::AxisymmetricProfile => {
                    c.iter().enumerate().map(|(m, a)| a * (m as f64 * t).cos()).sum()
                }
                Mode::PeriodicCurve => {
                    let half = self.len / 2;
                    let mut v = c[0] + c[self.len - 1] * (half as f64 * t).cos();
                    for m in 1..half {
                        let mf = m as f64;
                        v += c[2 * m - 1] * (mf * t).cos() + c[2 * m] * (mf * t).sin();
                    }
                    v
                }
            })
            .map(|v: f64| v + shift)
            .collect()
    }

    /// `(1/ω_{n−1}) ∫_{S^{n−1}} g dσ` for node samples `g`.
    pub fn sphere_mean(&self, values: &[f64]) -> f64 {
        let total: f64 = self.sphere_weights.iter().sum();
        self.sphere_weights.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_weights_sum_to_sphere_measure() {
        for n in 2..=8 {
            let g = Grid::shared(n, 32).unwrap();
            let s: f64 = g.sphere_weights().iter().sum();
            assert_relative_eq!(s, sphere_measure(n - 1), max_relative = 1e-13);
        }
    }

    #[test]
    fn differentiates_trigonometric_polynomials() {
        for n in [2usize, 3, 4, 7] {
            let g = Grid::shared(n, 48).unwrap();
            let f: Vec<f64> = g.angles().iter().map(|t| (3.0 * t).cos() + 0.2 * (7.0 * t).cos()).collect();
            let mut d = vec![0.0; g.len()];
            let mut dd = vec![0.0; g.len()];
            g.derivative(&f, &mut d);
            g.second_derivative(&f, &mut dd);
            for (j, t) in g.angles().iter().enumerate() {
                assert!((d[j] + 3.0 * (3.0 * t).sin() + 1.4 * (7.0 * t).sin()).abs() < 1e-10);
                assert!((dd[j] + 9.0 * (3.0 * t).cos() + 9.8 * (7.0 * t).cos()).abs() < 1e-9);
            }
            let back = g.evaluate(&f, &[0.0, 1.0, PI]);
            assert!((back[0] - 1.2).abs() < 1e-12);
            assert!((back[1] - (3f64.cos() + 0.2 * 7f64.cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_sine_modes() {
        let g = Grid::shared(2, 16).unwrap();
        let f: Vec<f64> = g.angles().iter().map(|t| (2.0 * t + 0.3).sin()).collect();
        let amps = g.mode_amplitudes(&f);
        assert_relative_eq!(amps[2], 1.0, max_relative = 1e-13);
        assert!(amps[1] < 1e-14 && amps[3] < 1e-14);
    }

    #[test]
    fn odd_periodic_resolution_rejected() {
        assert!(Grid::shared(2, 31).is_err());
        assert!(Grid::shared(3, 4).is_err());
    }
}

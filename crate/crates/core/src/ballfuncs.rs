//! Quermassintegrals of geodesic balls, `f_k(r) = W_k(B_r)`, and the
//! monotone compositions built from them:
//!
//! ```text
//! g_k(s) = n f_k(f_{k−2}^{-1}(s)) + n(k−1)/(n−k+2) s
//! h_k(s) = g_{k+1}(s/n − (k−2)/(n−k+3) g_{k−1}^{-1}(s))
//! ```
//!
//! A ball of radius `r` has `H_k ≡ coth^k r`, so `f_k` is the quermass
//! expansion evaluated on `ω_{n−1} coth^j r sinh^{n−1} r`. Products of
//! hyperbolic powers are formed in log space.
//!
//! `f_n ≡ ω_{n−1}/n` is constant; consequently `g_n(s) = ω_{n−1} + n(n−1)/2 s`
//! is defined as well and the top-order `h_{n−1}` is available.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;

use crate::error::{ensure, Error, Result};
use crate::integrals::quermass_expansion;
use crate::special::{sinh_power_integral, solve_increasing, sphere_measure};

/// Default upper end of the radius domain.
pub const DEFAULT_R_MAX: f64 = 10.0;
const TABLE_POINTS: usize = 400;
const TABLE_R_MIN: f64 = 1e-6;
const INVERSE_RTOL: f64 = 1e-15;

/// Ball functions of one ambient dimension, with monotone bracket tables
/// for the inverses.
#[derive(Debug)]
pub struct BallFunctionTable {
    n: usize,
    omega: f64,
    r_max: f64,
    radii: Vec<f64>,
    /// `values[k][i] = f_k(radii[i])`, `k = 0..n`.
    values: Vec<Vec<f64>>,
}

static TABLES: Lazy<Mutex<HashMap<usize, Arc<BallFunctionTable>>>> = Lazy::new(|| Mutex::new(HashMap::new()));

impl BallFunctionTable {
    pub fn new(n: usize, r_max: f64) -> Result<Self> {
        ensure!(n >= 2, Argument, "dimension must be >= 2, got {n}");
        ensure!(r_max > TABLE_R_MIN, Argument, "r_max must exceed {TABLE_R_MIN}");
        let mut t = BallFunctionTable { n, omega: sphere_measure(n - 1), r_max, radii: Vec::new(), values: Vec::new() };
        let ratio = (r_max / TABLE_R_MIN).ln() / (TABLE_POINTS - 1) as f64;
        t.radii = (0..TABLE_POINTS).map(|i| TABLE_R_MIN * (ratio * i as f64).exp()).collect();
        *t.radii.last_mut().unwrap() = r_max;
        t.values = (0..n).map(|k| t.radii.iter().map(|&r| t.f_unchecked(k, r)).collect()).collect();
        Ok(t)
    }

    /// Shared table with the default radius domain.
    pub fn shared(n: usize) -> Result<Arc<Self>> {
        if let Some(t) = TABLES.lock().unwrap().get(&n) {
            return Ok(t.clone());
        }
        let t = Arc::new(Self::new(n, DEFAULT_R_MAX)?);
        TABLES.lock().unwrap().entry(n).or_insert(t.clone());
        Ok(t)
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `ω_{n−1} coth^a r sinh^{n−1} r`, evaluated through logarithms.
    fn sphere_term(&self, a: usize, r: f64) -> f64 {
        let log_coth = (1.0 / r.tanh()).ln();
        let log_sinh = r.sinh().ln();
        self.omega * (a as f64 * log_coth + (self.n - 1) as f64 * log_sinh).exp()
    }

    fn ball_volume(&self, r: f64) -> f64 {
        self.omega * sinh_power_integral(self.n - 1, r)
    }

    fn f_unchecked(&self, k: usize, r: f64) -> f64 {
        let n = self.n;
        if k == n {
            return self.omega / n as f64;
        }
        if r <= 0.0 {
            return 0.0;
        }
        if k == 0 {
            return self.ball_volume(r);
        }
        let e = quermass_expansion(n, k);
        let sum: f64 = e.terms.iter().map(|&(j, c)| c * self.sphere_term(j, r)).sum();
        if e.volume != 0.0 {
            sum + e.volume * self.ball_volume(r)
        } else {
            sum
        }
    }

    /// `f_k(r) = W_k(B_r)`, `0 ≤ k ≤ n`.
    pub fn f(&self, k: usize, r: f64) -> Result<f64> {
        ensure!(k <= self.n, Argument, "f_k needs k <= n = {}, got {k}", self.n);
        ensure!(r >= 0.0, Argument, "radius must be nonnegative, got {r}");
        Ok(self.f_unchecked(k, r))
    }

    /// `f_k'(r) = (n−k)/n ∫_{∂B_r} H_k dμ`.
    pub fn f_prime(&self, k: usize, r: f64) -> f64 {
        if k >= self.n {
            return 0.0;
        }
        if r <= 0.0 {
            return if self.n - 1 == k { self.omega * (self.n - k) as f64 / self.n as f64 } else { 0.0 };
        }
        (self.n - k) as f64 / self.n as f64 * self.sphere_term(k, r)
    }

    /// `∫_{∂B_r} H_k dμ = ω_{n−1} coth^k r sinh^{n−1} r`.
    pub fn ball_curvature_integral(&self, k: usize, r: f64) -> f64 {
        if r <= 0.0 {
            return if k == self.n - 1 { self.omega } else { 0.0 };
        }
        self.sphere_term(k, r)
    }

    fn bracket(&self, k: usize, s: f64) -> (f64, f64) {
        let col = &self.values[k];
        let i = col.partition_point(|&v| v < s);
        let lo = if i == 0 { 0.0 } else { self.radii[i - 1] };
        let hi = self.radii[i.min(self.radii.len() - 1)];
        (lo, hi)
    }

    /// The radius `r` with `f_k(r) = s`, `0 ≤ k ≤ n−1`.
    pub fn f_inverse(&self, k: usize, s: f64) -> Result<f64> {
        ensure!(k < self.n, Argument, "f_k is constant for k = n; no inverse");
        ensure!(s >= 0.0 && s.is_finite(), Argument, "f_inverse needs finite s >= 0, got {s}");
        if s == 0.0 {
            return Ok(0.0);
        }
        let top = *self.values[k].last().unwrap();
        if s > top {
            return Err(Error::Range(format!(
                "f_{k}^(-1)({s:e}) exceeds the table range f_{k}({}) = {top:e}; raise r_max",
                self.r_max
            )));
        }
        let (lo, hi) = self.bracket(k, s);
        solve_increasing(|r| (self.f_unchecked(k, r), self.f_prime(k, r)), s, lo, hi, INVERSE_RTOL)
    }

    /// Closed-form `f_1^{-1}(s) = arsinh((n s / ω_{n−1})^{1/(n−1)})`.
    pub fn f1_inverse_closed(&self, s: f64) -> f64 {
        (self.n as f64 * s / self.omega).powf(1.0 / (self.n - 1) as f64).asinh()
    }

    fn check_g_index(&self, k: usize) -> Result<()> {
        ensure!(2 <= k && k <= self.n, Argument, "g_k needs 2 <= k <= n = {}, got {k}", self.n);
        Ok(())
    }

    fn g_slope(&self, k: usize) -> f64 {
        let n = self.n as f64;
        n * (k - 1) as f64 / (n - k as f64 + 2.0)
    }

    /// `g_k(s) = n f_k(f_{k−2}^{-1}(s)) + n(k−1)/(n−k+2) s`.
    pub fn g(&self, k: usize, s: f64) -> Result<f64> {
        self.check_g_index(k)?;
        let rho = self.f_inverse(k - 2, s)?;
        Ok(self.n as f64 * self.f_unchecked(k, rho) + self.g_slope(k) * s)
    }

    /// Inverse of [`Self::g`].
    ///
    /// `g_k(f_{k−2}(ρ))` is increasing in `ρ`, so the root is found in the
    /// radius variable and mapped back through `f_{k−2}`.
    pub fn g_inverse(&self, k: usize, t: f64) -> Result<f64> {
        self.check_g_index(k)?;
        ensure!(t.is_finite(), Argument, "g_inverse needs a finite argument");
        let n = self.n as f64;
        let slope = self.g_slope(k);
        let phi = |rho: f64| {
            let v = n * self.f_unchecked(k, rho) + slope * self.f_unchecked(k - 2, rho);
            let d = n * self.f_prime(k, rho) + slope * self.f_prime(k - 2, rho);
            (v, d)
        };
        let (bottom, _) = phi(0.0);
        let (top, _) = phi(self.r_max);
        if t < bottom || t > top {
            return Err(Error::Range(format!("g_{k}^(-1)({t:e}) outside [{bottom:e}, {top:e}]")));
        }
        if t == bottom {
            return Ok(0.0);
        }
        let rho = solve_increasing(phi, t, 0.0, self.r_max, INVERSE_RTOL)?;
        Ok(self.f_unchecked(k - 2, rho))
    }

    fn check_h_index(&self, k: usize) -> Result<()> {
        ensure!(
            2 <= k && k < self.n,
            Argument,
            "h_k needs 2 <= k <= n-1 = {} (h_1 would need g_0), got {k}",
            self.n - 1
        );
        Ok(())
    }

    /// Argument fed to `g_{k+1}` in `h_k`: `s/n − (k−2)/(n−k+3) g_{k−1}^{-1}(s)`.
    pub fn h_inner(&self, k: usize, s: f64) -> Result<f64> {
        self.check_h_index(k)?;
        let n = self.n as f64;
        if k == 2 {
            return Ok(s / n);
        }
        let c = (k - 2) as f64 / (n - k as f64 + 3.0);
        Ok(s / n - c * self.g_inverse(k - 1, s)?)
    }

    /// `h_k(s) = g_{k+1}(s/n − (k−2)/(n−k+3) g_{k−1}^{-1}(s))`.
    pub fn h(&self, k: usize, s: f64) -> Result<f64> {
        let inner = self.h_inner(k, s)?;
        // nonnegative by construction; tiny negative values are rounding
        let inner = if inner < 0.0 && inner > -1e-12 * s.abs().max(1.0) { 0.0 } else { inner };
        ensure!(inner >= 0.0, Domain, "h_{k} inner argument {inner:e} is negative");
        self.g(k + 1, inner)
    }

    /// `h_k ∘ h_{k−2} ∘ … ∘ h_{l+2}` applied to `s`, for `k − l` even.
    pub fn h_chain(&self, k: usize, l: usize, s: f64) -> Result<f64> {
        ensure!(l < k && (k - l) % 2 == 0, Argument, "chain needs l < k with k - l even, got k = {k}, l = {l}");
        let mut v = s;
        let mut j = l + 2;
        while j <= k {
            v = self.h(j, v)?;
            j += 2;
        }
        Ok(v)
    }

    /// `ω_{n−1}[(A/ω)^{2/k} + (A/ω)^{(2/k)(n−k−1)/(n−1)}]^{k/2}`.
    pub fn area_bound(&self, area: f64, k: usize) -> Result<f64> {
        ensure!(area > 0.0, Argument, "area must be positive, got {area}");
        ensure!(1 <= k && k < self.n, Argument, "area bound needs 1 <= k <= n-1, got {k}");
        let (n, kf) = (self.n as f64, k as f64);
        let x = area / self.omega;
        let inner = x.powf(2.0 / kf) + x.powf(2.0 / kf * (n - kf - 1.0) / (n - 1.0));
        Ok(self.omega * inner.powf(kf / 2.0))
    }

    /// `n f_{k+1}(f_l^{-1}(s)) + nk/(n−k+1) f_{k−1}(f_l^{-1}(s))`, the ball
    /// value of `∫ H_k` at fixed `W_l = s`.
    pub fn curvature_integral_given(&self, k: usize, l: usize, s: f64) -> Result<f64> {
        ensure!(1 <= k && k < self.n && l < self.n, Argument, "need 1 <= k <= n-1 and l <= n-1, got k = {k}, l = {l}");
        let rho = self.f_inverse(l, s)?;
        let n = self.n as f64;
        Ok(n * self.f_unchecked(k + 1, rho) + n * k as f64 / (n - k as f64 + 1.0) * self.f_unchecked(k - 1, rho))
    }
}

pub fn f(k: usize, r: f64, n: usize) -> Result<f64> {
    BallFunctionTable::shared(n)?.f(k, r)
}

pub fn f_inverse(k: usize, s: f64, n: usize) -> Result<f64> {
    BallFunctionTable::shared(n)?.f_inverse(k, s)
}

pub fn g(k: usize, s: f64, n: usize) -> Result<f64> {
    BallFunctionTable::shared(n)?.g(k, s)
}

pub fn g_inverse(k: usize, s: f64, n: usize) -> Result<f64> {
    BallFunctionTable::shared(n)?.g_inverse(k, s)
}

pub fn h(k: usize, s: f64, n: usize) -> Result<f64> {
    BallFunctionTable::shared(n)?.h(k, s)
}

/// Right side of the curvature-integral/area inequality.
pub fn area_bound(area: f64, k: usize, n: usize) -> Result<f64> {
    BallFunctionTable::shared(n)?.area_bound(area, k)
}

/// The same right side via `n f_{k+1}∘f_1^{-1} + nk/(n−k+1) f_{k−1}∘f_1^{-1}`
/// at `s = A/n`.
pub fn area_bound_by_composition(area: f64, k: usize, n: usize) -> Result<f64> {
    BallFunctionTable::shared(n)?.curvature_integral_given(k, 1, area / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table(n: usize) -> Arc<BallFunctionTable> {
        BallFunctionTable::shared(n).unwrap()
    }

    #[test]
    fn f1_value_and_limits() {
        assert_relative_eq!(f(1, 1.0, 3).unwrap(), 5.785_129_127_257_146, max_relative = 1e-14);
        for n in 2..=8 {
            for k in 0..n {
                assert_eq!(f(k, 0.0, n).unwrap(), 0.0);
                assert!(f(k, 1e-4, n).unwrap() < 1e-3);
            }
            assert_relative_eq!(f(n, 0.0, n).unwrap(), sphere_measure(n - 1) / n as f64);
        }
    }

    #[test]
    fn f_is_increasing_and_derivative_consistent() {
        for n in 2..=8 {
            let t = table(n);
            for k in 0..n {
                assert!(t.values[k].windows(2).all(|w| w[1] > w[0]), "n = {n}, k = {k}");
                for &r in &[0.05, 0.7, 2.0, 6.0] {
                    let h = 1e-5 * r;
                    let fd = (t.f(k, r + h).unwrap() - t.f(k, r - h).unwrap()) / (2.0 * h);
                    assert_relative_eq!(t.f_prime(k, r), fd, max_relative = 1e-7);
                }
            }
        }
    }

    #[test]
    fn f_inverse_round_trips() {
        for n in 2..=8 {
            let t = table(n);
            for k in 0..n {
                assert_eq!(t.f_inverse(k, 0.0).unwrap(), 0.0);
                for &r in &[1e-3, 0.2, 1.0, 2.0, 5.5, 9.9] {
                    let s = t.f(k, r).unwrap();
                    let back = t.f_inverse(k, s).unwrap();
                    assert_relative_eq!(back, r, max_relative = 1e-11);
                    assert_relative_eq!(t.f(k, back).unwrap(), s, max_relative = 1e-11);
                }
            }
            let s = sphere_measure(n - 1) * 2f64.sinh().powi(n as i32 - 1) / n as f64;
            assert_relative_eq!(t.f_inverse(1, s).unwrap(), 2.0, max_relative = 1e-11);
            for &s in &[1e-6, 0.3, 17.0, 4e3] {
                assert_relative_eq!(t.f_inverse(1, s).unwrap(), t.f1_inverse_closed(s), max_relative = 1e-11);
            }
            let over = t.f(0, 10.0).unwrap() * 1.01;
            assert!(matches!(t.f_inverse(0, over), Err(Error::Range(_))));
        }
    }

    #[test]
    fn g_round_trip_and_positivity() {
        for n in 3..=8 {
            let t = table(n);
            for k in 2..n {
                assert_eq!(t.g(k, 0.0).unwrap(), 0.0);
                let top = t.f(k - 2, 8.0).unwrap();
                let mut prev = 0.0;
                for i in 0..40 {
                    let s = top * (1e-9f64).powf(1.0 - i as f64 / 39.0);
                    let gs = t.g(k, s).unwrap();
                    assert!(gs > prev);
                    prev = gs;
                    assert_relative_eq!(t.g_inverse(k, gs).unwrap(), s, max_relative = 1e-10);
                    let pos = s / n as f64 - (k - 1) as f64 / (n - k + 2) as f64 * t.g_inverse(k, s).unwrap();
                    assert!(pos >= -1e-12 * s, "n = {n}, k = {k}, s = {s:e}: {pos:e}");
                }
            }
            // top order: g_n(s) = ω + n(n−1)/2 s
            let s = 0.37;
            assert_relative_eq!(
                t.g(n, s).unwrap(),
                sphere_measure(n - 1) + (n * (n - 1)) as f64 / 2.0 * s,
                max_relative = 1e-14
            );
        }
        assert!(table(4).g(1, 0.5).is_err());
    }

    #[test]
    fn h_reproduces_ball_integrals() {
        for n in 3..=8 {
            let t = table(n);
            for k in 2..n {
                let mut prev = 0.0;
                for &r in &[0.1, 0.5, 1.0, 2.5, 5.0] {
                    let s = t.ball_curvature_integral(k - 2, r);
                    let v = t.h(k, s).unwrap();
                    assert_relative_eq!(v, t.ball_curvature_integral(k, r), max_relative = 1e-9);
                    assert!(v > prev);
                    prev = v;
                }
            }
            for l in 0..n {
                for k in ((l + 2)..n).step_by(2) {
                    let r = 1.3;
                    let v = t.h_chain(k, l, t.ball_curvature_integral(l, r)).unwrap();
                    assert_relative_eq!(v, t.ball_curvature_integral(k, r), max_relative = 1e-8);
                }
            }
        }
        assert!(table(5).h(1, 1.0).is_err());
    }

    #[test]
    fn area_bound_on_balls_and_identity() {
        let b = area_bound(4.0 * std::f64::consts::PI * 1f64.sinh().powi(2), 2, 3).unwrap();
        assert_relative_eq!(b, 29.921_757_996_130_61, max_relative = 1e-13);
        for n in 2..=8 {
            let t = table(n);
            for k in 1..n {
                for &r in &[0.2, 1.0, 3.0] {
                    let area = t.ball_curvature_integral(0, r);
                    assert_relative_eq!(t.area_bound(area, k).unwrap(), t.ball_curvature_integral(k, r), max_relative = 1e-12);
                    assert_relative_eq!(
                        area_bound_by_composition(area, k, n).unwrap(),
                        t.area_bound(area, k).unwrap(),
                        max_relative = 1e-10
                    );
                }
                // the general composition at l = 1 is the same function
                let s = 0.8;
                assert_relative_eq!(
                    t.curvature_integral_given(k, 1, s).unwrap(),
                    t.area_bound(n as f64 * s, k).unwrap(),
                    max_relative = 1e-10
                );
            }
        }
    }
}

//! Curvature integrals, quermassintegrals and the integral identities that
//! tie them together (Minkowski formulas, Heintze–Karcher, Steiner).
//!
//! Quermassintegrals are computed from the expansion of `W_k` in curvature
//! integrals: for `1 ≤ k ≤ n−1`,
//!
//! ```text
//! W_k = 1/n Σ_i (−1)^i (k−1)!!(n−k)!! / ((k−1−2i)!!(n−k+2i)!!) ∫ H_{k−1−2i} dμ
//!       [+ (−1)^{k/2} (k−1)!!(n−k)!!/n!! Vol   when k is even]
//! ```
//!
//! with `W_0 = Vol` and `W_n = ω_{n−1}/n`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::special::{binomial, cosh_sinh_moment, double_factorial, sinh_power_integral, sphere_measure};
use crate::starbody::GeometryFrame;

/// Denominators below this switch residuals from relative to absolute.
pub const RELATIVE_FLOOR: f64 = 1e-8;

pub(crate) fn relative(residual: f64, scale: f64) -> f64 {
    if scale.abs() < RELATIVE_FLOOR {
        residual
    } else {
        residual / scale.abs()
    }
}

/// Linear expansion of `W_k` in terms of curvature integrals and volume.
#[derive(Clone, Debug, PartialEq)]
pub struct QuermassExpansion {
    /// `(j, c)`: contributes `c ∫ H_j dμ`.
    pub terms: Vec<(usize, f64)>,
    /// Coefficient of `Vol` (zero for odd `k`).
    pub volume: f64,
}

/// Expansion coefficients of `W_k`, `1 ≤ k ≤ n−1`.
pub fn quermass_expansion(n: usize, k: usize) -> QuermassExpansion {
    assert!(1 <= k && k < n, "expansion defined for 1 <= k <= n-1");
    let (ki, ni) = (k as i64, n as i64);
    let top = double_factorial(ki - 1) * double_factorial(ni - ki);
    let count = if k % 2 == 0 { k / 2 } else { (k + 1) / 2 };
    let terms = (0..count)
        .map(|i| {
            let ii = i as i64;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let c = sign * top / (double_factorial(ki - 1 - 2 * ii) * double_factorial(ni - ki + 2 * ii));
            (k - 1 - 2 * i, c / n as f64)
        })
        .collect();
    let volume = if k % 2 == 0 {
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        sign * top / double_factorial(ni)
    } else {
        0.0
    };
    QuermassExpansion { terms, volume }
}

/// Quermassintegrals `W_0 … W_n` and curvature integrals of one body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuermassVector {
    pub dimension: usize,
    /// `w[k] = W_k`, `k = 0..=n`.
    pub w: Vec<f64>,
    /// `v[j] = V_j = ∫ H_{n−1−j} dμ`, `j = 0..n`.
    pub v: Vec<f64>,
}

impl QuermassVector {
    /// `∫ H_k dμ = V_{n−1−k}`.
    pub fn curvature_integral(&self, k: usize) -> f64 {
        self.v[self.dimension - 1 - k]
    }

    pub fn area(&self) -> f64 {
        self.curvature_integral(0)
    }

    pub fn volume(&self) -> f64 {
        self.w[0]
    }
}

/// `ω_k`.
pub fn sphere_measure_of(k: usize) -> f64 {
    sphere_measure(k)
}

/// `∫ H_k dμ`.
pub fn curvature_integral(frame: &GeometryFrame, k: usize) -> Result<f64> {
    ensure!(k < frame.dimension(), Argument, "k = {k} out of range for n = {}", frame.dimension());
    Ok(frame.integrate(frame.h(k)))
}

/// Enclosed volume `∫_{S^{n−1}} ∫_0^{r} sinh^{n−1}(s) ds dσ`.
pub fn volume(frame: &GeometryFrame) -> f64 {
    let m = frame.dimension() - 1;
    frame
        .grid()
        .sphere_weights()
        .iter()
        .zip(&frame.r)
        .map(|(w, &r)| w * sinh_power_integral(m, r))
        .sum()
}

pub fn quermassintegrals(frame: &GeometryFrame) -> QuermassVector {
    quermass_from_parts(frame.dimension(), &curvature_integrals(frame), volume(frame))
}

/// `[∫H_0, …, ∫H_{n−1}]`.
pub fn curvature_integrals(frame: &GeometryFrame) -> Vec<f64> {
    frame.mean_curvatures.iter().map(|h| frame.integrate(h)).collect()
}

/// Assembles the quermass vector from `∫H_k` (indexed by `k`) and the volume.
pub fn quermass_from_parts(n: usize, h_integrals: &[f64], vol: f64) -> QuermassVector {
    let mut w = Vec::with_capacity(n + 1);
    w.push(vol);
    for k in 1..n {
        let e = quermass_expansion(n, k);
        let sum: f64 = e.terms.iter().map(|&(j, c)| c * h_integrals[j]).sum();
        w.push(sum + e.volume * vol);
    }
    w.push(sphere_measure(n - 1) / n as f64);
    let v = (0..n).map(|j| h_integrals[n - 1 - j]).collect();
    QuermassVector { dimension: n, w, v }
}

/// `V_{n−1−k} − n(W_{k+1} + k/(n−k+1) W_{k−1})`, relative to `V_{n−1−k}`.
///
/// For `k ≤ n−2` this vanishes identically given the expansions; for
/// `k = n−1` it is the discrete Gauss–Bonnet–Chern defect.
pub fn relation_residual(q: &QuermassVector, k: usize) -> Result<f64> {
    let n = q.dimension;
    ensure!(1 <= k && k < n, Argument, "relation defined for 1 <= k <= n-1, got {k}");
    let lhs = q.curvature_integral(k);
    let rhs = n as f64 * (q.w[k + 1] + k as f64 / (n - k + 1) as f64 * q.w[k - 1]);
    Ok(relative(lhs - rhs, lhs))
}

/// Volume of the parallel body at distance `rho`, from `V_0 … V_{n−1}`
/// (indexed as `V_j = ∫ H_{n−1−j}`).
pub fn steiner_volume(v: &[f64], vol: f64, rho: f64, n: usize) -> Result<f64> {
    ensure!(rho >= 0.0, Argument, "parallel distance must be nonnegative, got {rho}");
    ensure!(v.len() == n, Argument, "expected {n} curvature integrals, got {}", v.len());
    Ok(vol
        + (0..n)
            .map(|k| binomial(n - 1, k) * v[k] * cosh_sinh_moment(k, n - 1 - k, rho))
            .sum::<f64>())
}

/// `(∫ H_k u dμ − ∫ H_{k−1} ρ dμ) / ∫ H_{k−1} ρ dμ`.
pub fn minkowski_residual(frame: &GeometryFrame, k: usize) -> Result<f64> {
    ensure!(1 <= k && k < frame.dimension(), Argument, "Minkowski identity needs 1 <= k <= n-1, got {k}");
    let lhs = frame.integrate_product(frame.h(k), &frame.support);
    let rhs = frame.integrate_product(frame.h(k - 1), &frame.rho);
    Ok(relative(lhs - rhs, rhs))
}

/// Largest Minkowski residual over all admissible `k`.
pub fn max_minkowski_residual(frame: &GeometryFrame) -> f64 {
    (1..frame.dimension())
        .map(|k| minkowski_residual(frame, k).map(f64::abs).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max)
}

/// `∫ ρ/H_1 dμ − ∫ u dμ`, nonnegative for mean-convex bodies.
pub fn heintze_karcher_deficit(frame: &GeometryFrame) -> Result<f64> {
    let h1 = frame.h(1);
    if let Some(bad) = h1.iter().find(|&&h| h <= 0.0) {
        return Err(Error::Domain(format!("H_1 = {bad:e} is not positive")));
    }
    let lhs: f64 = frame.area_weight.iter().zip(&frame.rho).zip(h1).map(|((w, r), h)| w * r / h).sum();
    Ok(lhs - frame.integrate(&frame.support))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::starbody::{make_ball, make_offcenter_ball, make_perturbed_ball, StarBody};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn frame(b: &StarBody) -> GeometryFrame {
        b.geometry().unwrap()
    }

    fn ball_integral(n: usize, k: usize, r: f64) -> f64 {
        sphere_measure(n - 1) * (1.0 / r.tanh()).powi(k as i32) * r.sinh().powi(n as i32 - 1)
    }

    #[test]
    fn expansion_coefficients_small_cases() {
        // W_1 = |∂K|/n; W_2 = (∫H_1 − Vol)/3 in H^3
        assert_eq!(quermass_expansion(3, 1), QuermassExpansion { terms: vec![(0, 1.0 / 3.0)], volume: 0.0 });
        let e = quermass_expansion(3, 2);
        assert_eq!(e.terms, vec![(1, 1.0 / 3.0)]);
        assert_relative_eq!(e.volume, -1.0 / 3.0);
        // W_3 in H^5: (1/5)(∫H_2 − (2·2)/(0!!·4!!)... )
        let e = quermass_expansion(5, 3);
        assert_eq!(e.terms.len(), 2);
        assert_relative_eq!(e.terms[1].1, -(2.0 * 2.0) / (1.0 * 4.0 * 2.0) / 5.0);
    }

    #[test]
    fn ball_curvature_integrals() {
        let f = frame(&make_ball(4, 1.0, 32).unwrap());
        assert_relative_eq!(curvature_integral(&f, 2).unwrap(), 55.235_616_673_039_92, max_relative = 1e-13);
        for k in 0..4 {
            assert_relative_eq!(curvature_integral(&f, k).unwrap(), ball_integral(4, k, 1.0), max_relative = 1e-13);
        }
        assert!(curvature_integral(&f, 4).is_err());
    }

    #[test]
    fn ball_volumes() {
        assert_relative_eq!(volume(&frame(&make_ball(2, 1.0, 16).unwrap())), 3.412_276_265_284_902, max_relative = 1e-14);
        assert_relative_eq!(volume(&frame(&make_ball(3, 1.0, 16).unwrap())), 5.110_932_705_708_289, max_relative = 1e-14);
        let base = make_perturbed_ball(3, 1.0, &BTreeMap::from([(2, 0.1)]), 32, 0).unwrap();
        let grown = base.with_nodes(base.nodes().iter().map(|r| r + 0.01).collect()).unwrap();
        assert!(volume(&frame(&grown)) > volume(&frame(&base)));
    }

    #[test]
    fn quermass_of_ball() {
        let q = quermassintegrals(&frame(&make_ball(3, 1.0, 32).unwrap()));
        assert_relative_eq!(q.w[1], 5.785_129_127_257_146, max_relative = 1e-13);
        assert_relative_eq!(q.w[3], 4.0 * std::f64::consts::PI / 3.0);
        assert!(q.w.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn relation_is_an_identity() {
        for n in 2..=7 {
            let amps = BTreeMap::from([(2, 0.08), (3, -0.03)]);
            for b in [make_ball(n, 0.8, 32).unwrap(), make_perturbed_ball(n, 0.8, &amps, 64, 3).unwrap()] {
                let q = quermassintegrals(&frame(&b));
                for k in 1..n - 1 {
                    assert!(relation_residual(&q, k).unwrap().abs() < 1e-12, "n = {n}, k = {k}");
                }
                // Gauss–Bonnet–Chern, up to discretization
                assert!(relation_residual(&q, n - 1).unwrap().abs() < 1e-10, "n = {n}");
            }
        }
    }

    #[test]
    fn steiner_formula_on_balls() {
        for n in 2..=6 {
            let r = 0.9;
            let q = quermassintegrals(&frame(&make_ball(n, r, 16).unwrap()));
            let vol = |t: f64| sphere_measure(n - 1) * sinh_power_integral(n - 1, t);
            assert_eq!(steiner_volume(&q.v, q.w[0], 0.0, n).unwrap(), q.w[0]);
            let mut prev = q.w[0];
            for rho in [0.1, 0.5, 1.3] {
                let s = steiner_volume(&q.v, q.w[0], rho, n).unwrap();
                assert_relative_eq!(s, vol(r + rho), max_relative = 1e-10);
                assert!(s > prev);
                prev = s;
            }
        }
        assert!(steiner_volume(&[1.0, 1.0], 1.0, -0.1, 2).is_err());
    }

    #[test]
    fn minkowski_and_heintze_karcher() {
        for n in 2..=5 {
            let f = frame(&make_ball(n, 1.3, 32).unwrap());
            for k in 1..n {
                assert!(minkowski_residual(&f, k).unwrap().abs() <= 1e-14);
            }
            assert!(relative(heintze_karcher_deficit(&f).unwrap(), f.integrate(&f.support)).abs() < 1e-12);
            let f = frame(&make_offcenter_ball(n, 1.2, 0.5, 128).unwrap());
            assert!(max_minkowski_residual(&f) < 1e-8);
            assert!(heintze_karcher_deficit(&f).unwrap().abs() < 1e-8);
            let p = make_perturbed_ball(n, 1.0, &BTreeMap::from([(2, 0.1), (3, 0.05)]), 128, 1).unwrap();
            let f = frame(&p);
            assert!(max_minkowski_residual(&f) < 1e-10);
            assert!(heintze_karcher_deficit(&f).unwrap() > 1e-6);
        }
    }

    #[test]
    fn isometry_invariance() {
        for n in [2usize, 3, 4, 5] {
            let a = quermassintegrals(&frame(&make_ball(n, 1.2, 32).unwrap()));
            let b = quermassintegrals(&frame(&make_offcenter_ball(n, 1.2, 0.6, 128).unwrap()));
            for (x, y) in a.w.iter().zip(&b.w).chain(a.v.iter().zip(&b.v)) {
                assert_relative_eq!(x, y, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn monotone_under_inclusion() {
        let amps = BTreeMap::from([(2, 0.06), (4, 0.02)]);
        for n in 3..=5 {
            let inner = make_perturbed_ball(n, 1.0, &amps, 64, 0).unwrap();
            let outer = inner.with_nodes(inner.nodes().iter().map(|r| r + 0.05).collect()).unwrap();
            assert!(outer.h_convexity_margin().unwrap() > 0.0);
            let (qi, qo) = (quermassintegrals(&frame(&inner)), quermassintegrals(&frame(&outer)));
            for k in 0..n {
                assert!(qi.w[k] < qo.w[k], "n = {n}, k = {k}");
            }
            let (bi, bo) = (make_ball(n, 0.7, 16).unwrap(), make_ball(n, 0.71, 16).unwrap());
            let (qi, qo) = (quermassintegrals(&frame(&bi)), quermassintegrals(&frame(&bo)));
            assert!((0..n).all(|k| qi.w[k] < qo.w[k]));
        }
    }
}

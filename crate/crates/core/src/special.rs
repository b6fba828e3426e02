//! Small numerical toolkit: combinatorial constants, sphere measures,
//! integrals of hyperbolic powers, adaptive Gauss–Kronrod quadrature,
//! safeguarded monotone root finding and Gauss–Gegenbauer rules.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// `C(m, k)` as a float (0 when `k > m`).
pub fn binomial(m: usize, k: usize) -> f64 {
    if k > m {
        return 0.0;
    }
    let k = k.min(m - k);
    (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64).round()
}

/// `m!!` with the conventions `0!! = (-1)!! = 1`.
pub fn double_factorial(m: i64) -> f64 {
    let mut acc = 1.0;
    let mut j = m;
    while j > 1 {
        acc *= j as f64;
        j -= 2;
    }
    acc
}

/// Measure `ω_k` of the unit `k`-sphere, `2π^{(k+1)/2} / Γ((k+1)/2)`.
pub fn sphere_measure(k: usize) -> f64 {
    // ω_k = 2π/(k-1) ω_{k-2}
    let mut w = if k % 2 == 0 { 2.0 } else { 2.0 * PI };
    let mut j = if k % 2 == 0 { 0 } else { 1 };
    while j < k {
        j += 2;
        w *= 2.0 * PI / (j - 1) as f64;
    }
    w
}

/// `∫_0^r sinh^m(t) dt`.
///
/// Uses the reduction `I_m = sinh^{m-1} r cosh r / m − (m-1)/m I_{m-2}` for
/// `m ≤ 5` and `r ≥ 1`, where it is free of cancellation, and adaptive
/// quadrature otherwise.
pub fn sinh_power_integral(m: usize, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if m <= 5 && r >= 1.0 {
        let (s, c) = (r.sinh(), r.cosh());
        let mut prev2 = r; // I_0
        let mut prev1 = c - 1.0; // I_1
        if m == 0 {
            return prev2;
        }
        for j in 2..=m {
            let next = s.powi(j as i32 - 1) * c / j as f64 - (j - 1) as f64 / j as f64 * prev2;
            prev2 = prev1;
            prev1 = next;
        }
        return prev1;
    }
    let mi = m as i32;
    integrate_adaptive(|t| t.sinh().powi(mi), 0.0, r, 1e-15, 0.0)
}

/// `∫_0^ρ cosh^a(s) sinh^b(s) ds`, the Steiner moment integrals.
pub fn cosh_sinh_moment(a: usize, b: usize, rho: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    let (ai, bi) = (a as i32, b as i32);
    integrate_adaptive(|s| s.cosh().powi(ai) * s.sinh().powi(bi), 0.0, rho, 1e-14, 1e-12)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// `(integral, error estimate, integral of |f|)` on `[a, b]`.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * GK_WEIGHTS_K[7];
    let mut g = fc * GK_WEIGHTS_G[3];
    let mut abs = fc.abs() * GK_WEIGHTS_K[7];
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let (f1, f2) = (f(c - x), f(c + x));
        k += GK_WEIGHTS_K[i] * (f1 + f2);
        abs += GK_WEIGHTS_K[i] * (f1.abs() + f2.abs());
        if i % 2 == 1 {
            g += GK_WEIGHTS_G[i / 2] * (f1 + f2);
        }
    }
    (k * h, ((k - g) * h).abs(), abs * h.abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]` to
/// `max(rtol·|I|, atol)`.
///
/// Global strategy: the interval with the largest error estimate is split
/// until the summed estimate meets the goal, the estimate falls to the
/// roundoff level of `∫|f|`, or the subdivision budget is spent.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rtol: f64, atol: f64) -> f64 {
    const MAX_INTERVALS: usize = 2000;
    let mut parts = vec![(a, b, gk15(&f, a, b))];
    loop {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        let abs_mass: f64 = parts.iter().map(|p| p.2 .2).sum();
        let goal = (rtol * total.abs()).max(atol).max(50.0 * f64::EPSILON * abs_mass);
        if err <= goal || parts.len() >= MAX_INTERVALS {
            return total;
        }
        let (i, _) = parts
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, p)| if p.2 .1 > best.1 { (i, p.2 .1) } else { best });
        let (lo, hi, _) = parts.swap_remove(i);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return total;
        }
        parts.push((lo, mid, gk15(&f, lo, mid)));
        parts.push((mid, hi, gk15(&f, mid, hi)));
    }
}

/// Solves `g(x) = target` for an increasing `g` on `[lo, hi]` with
/// `g(lo) ≤ target ≤ g(hi)`. `g` returns `(value, derivative)`.
///
/// Newton steps that leave the current bracket fall back to bisection.
pub fn solve_increasing<G>(g: G, target: f64, mut lo: f64, mut hi: f64, rtol: f64) -> Result<f64>
where
    G: Fn(f64) -> (f64, f64),
{
    if !(lo <= hi) {
        return Err(Error::Internal(format!("bad bracket [{lo}, {hi}]")));
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (v, d) = g(x);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite value at x = {x}")));
        }
        if v == target {
            return Ok(x);
        }
        if v < target {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - (v - target) / d;
        let next = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let step = (next - x).abs();
        x = next;
        if step <= rtol * x.abs() || hi - lo <= rtol * x.abs() || step == 0.0 {
            return Ok(x);
        }
    }
    Err(Error::Internal(format!("root finder did not converge near x = {x}")))
}

/// Gegenbauer polynomial `C_m^{(λ)}(x)` and its derivative.
fn gegenbauer(m: usize, lambda: f64, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    if m == 0 {
        return (p0, 0.0);
    }
    let mut p1 = 2.0 * lambda * x;
    for j in 2..=m {
        let jf = j as f64;
        let p2 = (2.0 * x * (jf + lambda - 1.0) * p1 - (jf + 2.0 * lambda - 2.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let mf = m as f64;
    let d = (-mf * x * p1 + (mf + 2.0 * lambda - 1.0) * p0) / (1.0 - x * x);
    (p1, d)
}

/// Gauss–Gegenbauer rule with weight `(1 − x²)^{λ − 1/2}` on `[-1, 1]`.
///
/// Nodes come from the Jacobi matrix eigenvalues and are polished by Newton
/// on `C_m^{(λ)}`; weights use `w_j ∝ 1 / ((1 − x_j²) C_m'(x_j)²)` scaled
/// to the exact total mass. Nodes are returned in decreasing order.
pub fn gauss_gegenbauer(m: usize, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 || lambda <= 0.0 {
        return Err(Error::Argument(format!("gauss_gegenbauer needs m >= 1, lambda > 0 (got {m}, {lambda})")));
    }
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for j in 1..m {
        let jf = j as f64;
        let b = jf * (jf + 2.0 * lambda - 1.0) / (4.0 * (jf + lambda) * (jf + lambda - 1.0));
        jac[(j, j - 1)] = b.sqrt();
        jac[(j - 1, j)] = b.sqrt();
    }
    let eig = SymmetricEigen::new(jac);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // Nodes are symmetric; polish the nonnegative half and mirror it.
    for i in 0..m {
        if nodes[i] < 0.0 {
            break;
        }
        let mut x = nodes[i];
        for _ in 0..20 {
            let (p, d) = gegenbauer(m, lambda, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-17 {
                break;
            }
        }
        nodes[i] = x;
        nodes[m - 1 - i] = -x;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (_, d) = gegenbauer(m, lambda, x);
            1.0 / ((1.0 - x * x) * d * d)
        })
        .collect();
    let mass = gegenbauer_mass(lambda);
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w *= mass / sum;
    }
    Ok((nodes, weights))
}

/// `∫_{-1}^{1} (1 − x²)^{λ − 1/2} dx = B(1/2, λ + 1/2)`.
fn gegenbauer_mass(lambda: f64) -> f64 {
    let twice = 2.0 * lambda;
    if (twice - twice.round()).abs() < 1e-12 && twice.round() >= 1.0 {
        // ∫_0^π sin^d φ dφ = ω_{d+1} / ω_d
        let d = twice.round() as usize;
        return sphere_measure(d + 1) / sphere_measure(d);
    }
    integrate_adaptive(|x: f64| (1.0 - x * x).powf(lambda - 0.5), -1.0, 1.0, 1e-14, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn binomials_and_double_factorials() {
        assert_eq!(binomial(7, 3), 35.0);
        assert_eq!(binomial(3, 4), 0.0);
        assert_eq!(binomial(0, 0), 1.0);
        assert_eq!(double_factorial(-1), 1.0);
        assert_eq!(double_factorial(0), 1.0);
        assert_eq!(double_factorial(7), 105.0);
        assert_eq!(double_factorial(8), 384.0);
    }

    #[test]
    fn sphere_measures() {
        assert_relative_eq!(sphere_measure(0), 2.0);
        assert_relative_eq!(sphere_measure(1), 2.0 * PI);
        assert_relative_eq!(sphere_measure(2), 4.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(sphere_measure(3), 19.739_208_802_178_716, max_relative = 1e-15);
        assert_relative_eq!(sphere_measure(4), 8.0 * PI * PI / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn sinh_integrals_agree_across_methods() {
        for m in 0..=7 {
            for &r in &[0.01, 0.3, 0.99, 1.0, 1.7, 4.0, 9.5] {
                let q = integrate_adaptive(|t: f64| t.sinh().powi(m as i32), 0.0, r, 1e-15, 0.0);
                assert_relative_eq!(sinh_power_integral(m, r), q, max_relative = 1e-13);
            }
        }
        // closed forms
        assert_relative_eq!(sinh_power_integral(1, 1.0), 1.0f64.cosh() - 1.0, max_relative = 1e-15);
        assert_relative_eq!(
            sinh_power_integral(2, 1.0),
            (2.0f64.sinh() - 2.0) / 4.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(sinh_power_integral(2, 1e-3), 1e-9 / 3.0, max_relative = 1e-6);
    }

    #[test]
    fn moments_sum_to_parallel_ball() {
        // Σ C(m,k) cosh^{m-k} r sinh^k r ∫cosh^k sinh^{m-k} = ∫ sinh^m(r+s) ds
        let (r, rho, m) = (0.8f64, 0.6f64, 3usize);
        let lhs: f64 = (0..=m)
            .map(|k| binomial(m, k) * r.cosh().powi((m - k) as i32) * r.sinh().powi(k as i32) * cosh_sinh_moment(k, m - k, rho))
            .sum();
        let rhs = sinh_power_integral(m, r + rho) - sinh_power_integral(m, r);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn root_finder() {
        let x = solve_increasing(|x| (x.powi(5), 5.0 * x.powi(4)), 7.0, 0.0, 10.0, 1e-15).unwrap();
        assert_relative_eq!(x, 7f64.powf(0.2), max_relative = 1e-14);
    }

    #[test]
    fn gegenbauer_rules_integrate_polynomials() {
        for (m, lambda) in [(5usize, 0.5), (16, 1.0), (33, 1.5), (64, 2.5)] {
            let (x, w) = gauss_gegenbauer(m, lambda).unwrap();
            assert!(x.windows(2).all(|p| p[0] > p[1]));
            // exactness for x^{2j}, j ≤ m - 1, against adaptive quadrature
            for j in [0usize, 1, 3, m - 1] {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * j as i32)).sum();
                let exact = integrate_adaptive(
                    |t: f64| t.powi(2 * j as i32) * (1.0 - t * t).powf(lambda - 0.5),
                    -1.0,
                    1.0,
                    1e-15,
                    1e-300,
                );
                assert_relative_eq!(q, exact, max_relative = 1e-12);
            }
        }
        let (x, w) = gauss_gegenbauer(2, 0.5).unwrap();
        assert_relative_eq!(x[0], 1.0 / 3f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(w[0], 1.0, max_relative = 1e-15);
    }
}

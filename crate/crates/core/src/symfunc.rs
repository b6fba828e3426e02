//! Elementary symmetric functions of principal curvatures.
//!
//! Everything here is a pure function of a [`CurvatureVector`]; the scalar
//! type is generic so the same code serves `f32` diagnostics and the `f64`
//! geometry pipeline.

use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;
use crate::special::binomial;

/// Principal curvatures `(λ_1, …, λ_{n-1})` of a hypersurface in `H^n`.
///
/// A geodesic sphere of radius `r` has every entry equal to `coth r`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureVector<T: Scalar> {
    lambda: Vec<T>,
}

impl<T: Scalar> CurvatureVector<T> {
    /// Builds a curvature tuple; needs at least one entry, all finite.
    pub fn new(lambda: Vec<T>) -> Result<Self> {
        ensure!(!lambda.is_empty(), Argument, "curvature vector must have n-1 >= 1 entries");
        ensure!(
            lambda.iter().all(|x| x.is_finite()),
            Argument,
            "curvature vector has non-finite entries"
        );
        Ok(Self { lambda })
    }

    /// Isotropic tuple `(c, …, c)` of length `len`.
    pub fn isotropic(c: T, len: usize) -> Result<Self> {
        Self::new(vec![c; len])
    }

    /// Number of principal directions, `n - 1`.
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// Ambient dimension `n`.
    pub fn ambient_dimension(&self) -> usize {
        self.lambda.len() + 1
    }

    pub fn as_slice(&self) -> &[T] {
        &self.lambda
    }

    pub fn scaled(&self, t: T) -> Self {
        Self { lambda: self.lambda.iter().map(|&x| x * t).collect() }
    }

    fn check_order(&self, k: usize) -> Result<()> {
        ensure!(
            k <= self.len(),
            Argument,
            "order k = {k} out of range 0..={} for n - 1 = {}",
            self.len(),
            self.len()
        );
        Ok(())
    }

    /// All of `σ_0, …, σ_k` in one pass over the generating polynomial
    /// `∏(1 + tλ_i)`.
    pub fn sigma_upto(&self, k: usize) -> Result<Vec<T>> {
        self.check_order(k)?;
        Ok(elementary_symmetric(&self.lambda, k))
    }

    /// `σ_k(λ)`.
    pub fn sigma(&self, k: usize) -> Result<T> {
        Ok(self.sigma_upto(k)?[k])
    }

    /// Normalized mean curvature `H_k = σ_k / C(n-1, k)`.
    pub fn normalized_h(&self, k: usize) -> Result<T> {
        let s = self.sigma(k)?;
        Ok(s / T::lit(binomial(self.len(), k)))
    }

    /// `H_0, …, H_{n-1}`.
    pub fn normalized_all(&self) -> Vec<T> {
        let m = self.len();
        elementary_symmetric(&self.lambda, m)
            .into_iter()
            .enumerate()
            .map(|(j, s)| s / T::lit(binomial(m, j)))
            .collect()
    }

    /// Strict membership in the Garding cone `Γ_k^+`, together with the
    /// smallest of `σ_1, …, σ_k` as a margin.
    pub fn in_garding_cone(&self, k: usize) -> Result<(bool, T)> {
        ensure!(k >= 1, Argument, "cone order must be >= 1");
        let s = self.sigma_upto(k)?;
        let margin = s[1..].iter().copied().fold(T::infinity(), T::min);
        Ok((margin > T::zero(), margin))
    }

    /// Newton–MacLaurin residuals
    /// `(H_{k-1}H_l − H_k H_{l-1}, H_l − H_k^{l/k})` for `1 ≤ l < k ≤ n-1`.
    ///
    /// Both are nonnegative on the closure of `Γ_k^+`, and vanish exactly
    /// on isotropic tuples. `slack` widens the cone test to its closure.
    pub fn newton_maclaurin_residuals(&self, k: usize, l: usize, slack: T) -> Result<(T, T)> {
        ensure!(1 <= l && l < k, Argument, "need 1 <= l < k, got l = {l}, k = {k}");
        self.check_order(k)?;
        let (_, margin) = self.in_garding_cone(k)?;
        if margin < -slack {
            return Err(Error::Domain(format!(
                "curvatures outside the closure of Gamma_{k}^+ (min sigma = {margin:e})"
            )));
        }
        let h = self.normalized_all();
        let first = h[k - 1] * h[l] - h[k] * h[l - 1];
        let hk = h[k].max(T::zero());
        let second = h[l] - hk.powf(T::lit(l as f64) / T::lit(k as f64));
        Ok((first, second))
    }

    /// Quotient speed `F = (H_k / H_l)^{1/(k-l)}` on the positive cone.
    ///
    /// Fails with a domain error when any entry or either mean curvature is
    /// nonpositive; callers are expected to reject the step, not clamp.
    pub fn flow_speed(&self, k: usize, l: usize) -> Result<T> {
        let h = self.speed_parts(k, l)?;
        Ok((h.0 / h.1).powf(T::one() / T::lit((k - l) as f64)))
    }

    /// Gradient `∂F/∂λ_i` of [`Self::flow_speed`].
    pub fn flow_speed_gradient(&self, k: usize, l: usize) -> Result<Vec<T>> {
        let (hk, hl) = self.speed_parts(k, l)?;
        let m = T::lit((k - l) as f64);
        let f = (hk / hl).powf(T::one() / m);
        let sk = hk * T::lit(binomial(self.len(), k));
        let sl = hl * T::lit(binomial(self.len(), l));
        let mut rest = Vec::with_capacity(self.len() - 1);
        Ok((0..self.len())
            .map(|i| {
                rest.clear();
                rest.extend(self.lambda.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x));
                let partial = elementary_symmetric(&rest, k.saturating_sub(1).max(l.saturating_sub(1)));
                let dk = partial[k - 1];
                let dl = if l == 0 { T::zero() } else { partial[l - 1] };
                f / m * (dk / sk - dl / sl)
            })
            .collect())
    }

    fn speed_parts(&self, k: usize, l: usize) -> Result<(T, T)> {
        ensure!(l < k, Argument, "flow speed needs l < k, got l = {l}, k = {k}");
        self.check_order(k)?;
        if let Some(bad) = self.lambda.iter().find(|&&x| x <= T::zero()) {
            return Err(Error::Domain(format!(
                "principal curvature {bad:e} is not positive; speed undefined"
            )));
        }
        let h = self.normalized_all();
        if h[k] <= T::zero() || h[l] <= T::zero() {
            return Err(Error::Domain(format!("H_{k} = {:e}, H_{l} = {:e}", h[k], h[l])));
        }
        Ok((h[k], h[l]))
    }
}

/// `σ_0 … σ_k` of `values` (with `σ_j = 0` for `j` beyond `values.len()`).
pub fn elementary_symmetric<T: Scalar>(values: &[T], k: usize) -> Vec<T> {
    let mut e = vec![T::zero(); k + 1];
    e[0] = T::one();
    for (i, &x) in values.iter().enumerate() {
        for j in (1..=k.min(i + 1)).rev() {
            let prev = e[j - 1];
            e[j] += x * prev;
        }
    }
    e
}

pub fn sigma_k<T: Scalar>(lambda: &CurvatureVector<T>, k: usize) -> Result<T> {
    lambda.sigma(k)
}

pub fn normalized_h<T: Scalar>(lambda: &CurvatureVector<T>, k: usize) -> Result<T> {
    lambda.normalized_h(k)
}

pub fn in_garding_cone<T: Scalar>(lambda: &CurvatureVector<T>, k: usize) -> Result<(bool, T)> {
    lambda.in_garding_cone(k)
}

pub fn newton_maclaurin_residuals<T: Scalar>(
    lambda: &CurvatureVector<T>,
    k: usize,
    l: usize,
) -> Result<(T, T)> {
    lambda.newton_maclaurin_residuals(k, l, T::zero())
}

pub fn flow_speed<T: Scalar>(lambda: &CurvatureVector<T>, k: usize, l: usize) -> Result<T> {
    lambda.flow_speed(k, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cv(v: &[f64]) -> CurvatureVector<f64> {
        CurvatureVector::new(v.to_vec()).unwrap()
    }

    /// Subset enumeration; exponential, test-only.
    fn sigma_brute(v: &[f64], k: usize) -> f64 {
        let m = v.len();
        (0u32..(1 << m))
            .filter(|mask| mask.count_ones() as usize == k)
            .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).map(|i| v[i]).product::<f64>())
            .sum()
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(cv(&[1.0, 2.0, 3.0]).sigma(2).unwrap(), 11.0);
        assert_eq!(cv(&[-4.0, 0.5]).sigma(0).unwrap(), 1.0);
        assert_relative_eq!(cv(&[1.5; 4]).sigma(3).unwrap(), 13.5, max_relative = 1e-15);
        assert!(matches!(cv(&[1.0, 2.0]).sigma(3), Err(Error::Argument(_))));
    }

    #[test]
    fn normalized_examples() {
        let c = 1.313_035_285_499_331_3_f64;
        assert_relative_eq!(cv(&[c, c, c]).normalized_h(2).unwrap(), 1.724_061_660_966_310_5, max_relative = 1e-14);
        assert_relative_eq!(cv(&[1.0, 2.0, 3.0]).normalized_h(1).unwrap(), 2.0);
        assert_relative_eq!(cv(&[1.0, 2.0, 3.0]).normalized_h(3).unwrap(), 6.0);
    }

    #[test]
    fn cone_examples() {
        let (inside, margin) = cv(&[1.0, 1.0, 1.0]).in_garding_cone(3).unwrap();
        assert!(inside);
        assert_eq!(margin, 1.0);
        assert!(!cv(&[-1.0, -1.0, -1.0]).in_garding_cone(1).unwrap().0);
        let (inside, margin) = cv(&[3.0, 3.0, -0.1]).in_garding_cone(2).unwrap();
        assert!(inside);
        assert_relative_eq!(margin, 5.9, max_relative = 1e-15);
        // boundary of the cone is not inside
        assert!(!cv(&[1.0, 0.0, 0.0]).in_garding_cone(2).unwrap().0);
    }

    #[test]
    fn newton_maclaurin_examples() {
        let (a, b) = cv(&[1.0, 2.0, 3.0]).newton_maclaurin_residuals(2, 1, 0.0).unwrap();
        assert_relative_eq!(a, 1.0 / 3.0, max_relative = 1e-14);
        assert!(b > 0.0);
        let (_, b) = cv(&[1.0, 4.0]).newton_maclaurin_residuals(2, 1, 0.0).unwrap();
        assert_relative_eq!(b, 0.5, max_relative = 1e-14);
        let (a, b) = cv(&[1.7; 5]).newton_maclaurin_residuals(4, 2, 0.0).unwrap();
        assert!(a.abs() < 1e-13 && b.abs() < 1e-13);
        assert!(matches!(
            cv(&[-1.0, -2.0, 0.5]).newton_maclaurin_residuals(2, 1, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn flow_speed_examples() {
        let c = 1.25;
        for (k, l) in [(1, 0), (2, 0), (3, 1), (3, 2)] {
            assert_relative_eq!(cv(&[c; 3]).flow_speed(k, l).unwrap(), c, max_relative = 1e-14);
        }
        assert_relative_eq!(
            cv(&[1.0, 2.0, 3.0]).flow_speed(2, 0).unwrap(),
            1.914_854_215_512_676,
            max_relative = 1e-14
        );
        assert!(matches!(cv(&[1.0, -0.5]).flow_speed(1, 0), Err(Error::Domain(_))));
        assert!(matches!(cv(&[1.0, 2.0]).flow_speed(1, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let v = CurvatureVector::new(vec![1.0f32, 2.0, 3.0]).unwrap();
        assert_eq!(v.sigma(2).unwrap(), 11.0f32);
        assert!((v.flow_speed(2, 0).unwrap() - 1.914_854_2).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = cv(&[1.2, 1.9, 3.1, 1.4]);
        for (k, l) in [(1, 0), (2, 0), (4, 1), (3, 2)] {
            let g = v.flow_speed_gradient(k, l).unwrap();
            for i in 0..v.len() {
                let h = 1e-6;
                let mut p = v.as_slice().to_vec();
                let mut m = p.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (cv(&p).flow_speed(k, l).unwrap() - cv(&m).flow_speed(k, l).unwrap()) / (2.0 * h);
                assert_relative_eq!(g[i], fd, max_relative = 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn recurrence_matches_enumeration(v in prop::collection::vec(-3.0f64..3.0, 1..=6)) {
            let lam = cv(&v);
            for k in 0..=v.len() {
                let fast = lam.sigma(k).unwrap();
                let slow = sigma_brute(&v, k);
                let scale = v.iter().map(|x| x.abs()).fold(1.0, f64::max).powi(k as i32) * binomial(v.len(), k);
                prop_assert!((fast - slow).abs() <= 1e-13 * scale);
            }
        }

        #[test]
        fn normalized_is_permutation_symmetric(v in prop::collection::vec(-2.0f64..4.0, 2..=6), rot in 0usize..6) {
            let mut w = v.clone();
            w.rotate_left(rot % v.len());
            w.reverse();
            for k in 0..=v.len() {
                let a = cv(&v).normalized_h(k).unwrap();
                let b = cv(&w).normalized_h(k).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn speed_is_homogeneous_and_increasing(v in prop::collection::vec(0.2f64..5.0, 1..=6), t in 0.1f64..10.0) {
            let lam = cv(&v);
            let m = v.len();
            for k in 1..=m {
                for l in 0..k {
                    let f = lam.flow_speed(k, l).unwrap();
                    let ft = lam.scaled(t).flow_speed(k, l).unwrap();
                    prop_assert!((ft - t * f).abs() <= 1e-12 * t * f);
                    for i in 0..m {
                        let mut p = v.clone();
                        p[i] += 1e-6;
                        let fp = cv(&p).flow_speed(k, l).unwrap();
                        prop_assert!(fp > f, "not increasing in entry {}", i);
                    }
                }
            }
        }

        // Concavity along segments is a sanity property of the quotient family,
        // not a library guarantee.
        #[test]
        fn speed_concave_along_segments(
            a in prop::collection::vec(0.3f64..4.0, 3),
            b in prop::collection::vec(0.3f64..4.0, 3),
            s in 0.0f64..1.0,
        ) {
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (1.0 - s) * x + s * y).collect();
            for (k, l) in [(1, 0), (2, 0), (3, 0), (2, 1), (3, 1), (3, 2)] {
                let fa = cv(&a).flow_speed(k, l).unwrap();
                let fb = cv(&b).flow_speed(k, l).unwrap();
                let fm = cv(&mid).flow_speed(k, l).unwrap();
                prop_assert!(fm >= (1.0 - s) * fa + s * fb - 1e-12 * (fa + fb));
            }
        }
    }
}

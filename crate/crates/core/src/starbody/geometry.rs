//! Differential geometry of radial graphs in the polar model
//! `dr² + sinh²r g_{S^{n−1}}`.
//!
//! For the profile `r(φ)` with `s = sinh r`, `c = cosh r`,
//! `W = sqrt(r'² + s²)`:
//!
//! ```text
//! κ_meridian   = (s² c + 2 c r'² − s r'') / W³
//! κ_rotational = (s c − r' cot φ) / (W s)
//! ⟨∂_r, ν⟩     = s / W
//! dμ           = W (s sin φ)^{n−2} dφ dω_{S^{n−2}}
//! ```
//!
//! The meridian formula is the geodesic curvature of the profile in the
//! totally geodesic `H²` slice and is also the curvature of a closed curve
//! when `n = 2`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::starbody::grid::{Grid, Mode};
use crate::symfunc::CurvatureVector;

/// Per-node geometric data of a discrete star body.
#[derive(Clone, Debug)]
pub struct GeometryFrame {
    grid: Arc<Grid>,
    pub r: Vec<f64>,
    pub dr: Vec<f64>,
    pub ddr: Vec<f64>,
    pub kappa_meridian: Vec<f64>,
    /// Rotational curvature (multiplicity `n − 2`); empty for curves.
    pub kappa_rotational: Vec<f64>,
    /// Surface measure weights `dμ` including quadrature weights.
    pub area_weight: Vec<f64>,
    /// `ρ = cosh r`.
    pub rho: Vec<f64>,
    /// Support function `u = sinh r ⟨∂_r, ν⟩`.
    pub support: Vec<f64>,
    /// `⟨∂_r, ν⟩`.
    pub normal_radial: Vec<f64>,
    /// `mean_curvatures[k][i] = H_k` at node `i`, `k = 0..n−1`.
    pub mean_curvatures: Vec<Vec<f64>>,
}

impl GeometryFrame {
    pub(crate) fn compute(grid: Arc<Grid>, r: &[f64]) -> Result<GeometryFrame> {
        let len = grid.len();
        let n = grid.dimension();
        let mut dr = vec![0.0; len];
        let mut ddr = vec![0.0; len];
        grid.derivative(r, &mut dr);
        grid.second_derivative(r, &mut ddr);
        if dr.iter().chain(&ddr).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite derivative of the radial function".into()));
        }
        let axisym = grid.mode() == Mode::AxisymmetricProfile;
        let mut frame = GeometryFrame {
            r: r.to_vec(),
            kappa_meridian: Vec::with_capacity(len),
            kappa_rotational: Vec::with_capacity(if axisym { len } else { 0 }),
            area_weight: Vec::with_capacity(len),
            rho: Vec::with_capacity(len),
            support: Vec::with_capacity(len),
            normal_radial: Vec::with_capacity(len),
            mean_curvatures: vec![Vec::with_capacity(len); n],
            dr,
            ddr,
            grid: grid.clone(),
        };
        let m = (n - 1) as f64;
        for i in 0..len {
            let (ri, d1, d2) = (r[i], frame.dr[i], frame.ddr[i]);
            let (s, c) = (ri.sinh(), ri.cosh());
            let w = (d1 * d1 + s * s).sqrt();
            let km = (s * s * c + 2.0 * c * d1 * d1 - s * d2) / (w * w * w);
            frame.kappa_meridian.push(km);
            let kr = if axisym { (s * c - d1 * grid.cot_angles()[i]) / (w * s) } else { 0.0 };
            if axisym {
                frame.kappa_rotational.push(kr);
            }
            // (κ_m, κ_r, …, κ_r): H_j = ((n−1−j) κ_r^j + j κ_m κ_r^{j−1}) / (n−1)
            let mut prev = 1.0; // κ_r^{j−1}
            for (j, h) in frame.mean_curvatures.iter_mut().enumerate() {
                if j == 0 {
                    h.push(1.0);
                    continue;
                }
                let jf = j as f64;
                let pow = prev * kr;
                h.push(((m - jf) * pow + jf * km * prev) / m);
                prev = pow;
            }
            let nr = s / w;
            frame.normal_radial.push(nr);
            frame.support.push(s * nr);
            frame.rho.push(c);
            frame.area_weight.push(grid.sphere_weights()[i] * w * s.powi(n as i32 - 2));
        }
        if frame.kappa_meridian.iter().chain(&frame.kappa_rotational).any(|k| !k.is_finite()) {
            return Err(Error::Numeric("non-finite principal curvature".into()));
        }
        Ok(frame)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dimension(&self) -> usize {
        self.grid.dimension()
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Principal curvature tuple at node `i`.
    pub fn curvatures(&self, i: usize) -> CurvatureVector<f64> {
        let n = self.dimension();
        let mut v = vec![self.kappa_meridian[i]; n - 1];
        if !self.kappa_rotational.is_empty() {
            v[1..].iter_mut().for_each(|x| *x = self.kappa_rotational[i]);
        }
        CurvatureVector::new(v).expect("finite curvatures")
    }

    /// `H_k` at every node.
    pub fn h(&self, k: usize) -> &[f64] {
        &self.mean_curvatures[k]
    }

    /// `∫ g dμ` for node samples `g`.
    pub fn integrate(&self, g: &[f64]) -> f64 {
        self.area_weight.iter().zip(g).map(|(w, g)| w * g).sum()
    }

    /// `∫ g_1 g_2 dμ`.
    pub fn integrate_product(&self, a: &[f64], b: &[f64]) -> f64 {
        self.area_weight.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
    }

    pub fn area(&self) -> f64 {
        self.area_weight.iter().sum()
    }

    /// Smallest and largest principal curvature over all nodes and directions.
    pub fn curvature_range(&self) -> (f64, f64) {
        self.kappa_meridian
            .iter()
            .chain(&self.kappa_rotational)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &k| (lo.min(k), hi.max(k)))
    }
}

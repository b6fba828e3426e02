//! Star-shaped hypersurfaces in `H^n` written as radial graphs over the unit
//! sphere: closed curves for `n = 2`, axisymmetric profiles for `n ≥ 3`.

mod geometry;
mod grid;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use geometry::GeometryFrame;
pub use grid::{Grid, Mode};

use crate::error::{ensure, Error, Result};

/// Default h-convexity floor demanded of generated bodies.
pub const DEFAULT_MARGIN_MIN: f64 = 1e-3;
const MAX_HALVINGS: usize = 60;

/// Discrete radial graph `r(θ)` sampled on a [`Grid`].
#[derive(Clone, Debug)]
pub struct StarBody {
    grid: Arc<Grid>,
    nodes: Vec<f64>,
}

/// On-disk form of a [`StarBody`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BodyFile {
    pub dimension: usize,
    pub mode: Mode,
    pub nodes: Vec<f64>,
}

impl StarBody {
    /// Wraps radial samples; every sample must be finite and positive.
    pub fn from_nodes(dimension: usize, nodes: Vec<f64>) -> Result<StarBody> {
        let grid = Grid::shared(dimension, nodes.len())?;
        Self::on_grid(grid, nodes)
    }

    pub fn on_grid(grid: Arc<Grid>, nodes: Vec<f64>) -> Result<StarBody> {
        ensure!(nodes.len() == grid.len(), Argument, "expected {} nodes, got {}", grid.len(), nodes.len());
        if let Some((i, r)) = nodes.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::Geometry(format!("radial sample {i} is {r}; the origin must be interior")));
        }
        Ok(StarBody { grid, nodes })
    }

    /// Samples `f(angle)` on the grid for dimension `n`.
    pub fn from_fn<F: Fn(f64) -> f64>(dimension: usize, resolution: usize, f: F) -> Result<StarBody> {
        let grid = Grid::shared(dimension, resolution)?;
        let nodes = grid.angles().iter().map(|&t| f(t)).collect();
        Self::on_grid(grid, nodes)
    }

    pub fn dimension(&self) -> usize {
        self.grid.dimension()
    }

    pub fn mode(&self) -> Mode {
        self.grid.mode()
    }

    pub fn resolution(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Same grid, new samples.
    pub fn with_nodes(&self, nodes: Vec<f64>) -> Result<StarBody> {
        Self::on_grid(self.grid.clone(), nodes)
    }

    pub fn geometry(&self) -> Result<GeometryFrame> {
        GeometryFrame::compute(self.grid.clone(), &self.nodes)
    }

    /// `min(κ_i) − 1` over nodes and principal directions; the body is
    /// h-convex iff this is nonnegative.
    pub fn h_convexity_margin(&self) -> Result<f64> {
        Ok(self.geometry()?.curvature_range().0 - 1.0)
    }

    /// `min(⟨∂_r, ν⟩ − tanh r)` over nodes.
    pub fn support_lower_bound_check(&self) -> Result<f64> {
        let g = self.geometry()?;
        Ok(support_margin(&g))
    }

    /// Minimum and maximum of the radial function, evaluated on the nodes
    /// and on a dense angular sweep that includes the poles.
    pub fn radius_oscillation(&self) -> (f64, f64) {
        let dense = match self.mode() {
            Mode::AxisymmetricProfile => {
                let m = 4 * self.resolution();
                (0..=m).map(|j| PI * j as f64 / m as f64).collect::<Vec<_>>()
            }
            Mode::PeriodicCurve => {
                let m = 4 * self.resolution();
                (0..m).map(|j| 2.0 * PI * j as f64 / m as f64).collect::<Vec<_>>()
            }
        };
        self.grid
            .evaluate(&self.nodes, &dense)
            .into_iter()
            .chain(self.nodes.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }

    pub fn to_file(&self) -> BodyFile {
        BodyFile { dimension: self.dimension(), mode: self.mode(), nodes: self.nodes.clone() }
    }

    pub fn from_file(file: BodyFile) -> Result<StarBody> {
        ensure!(
            file.mode == Mode::for_dimension(file.dimension),
            Argument,
            "mode {:?} does not match dimension {}",
            file.mode,
            file.dimension
        );
        Self::from_nodes(file.dimension, file.nodes)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<StarBody> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<StarBody> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn support_margin(g: &GeometryFrame) -> f64 {
    g.normal_radial
        .iter()
        .zip(&g.r)
        .map(|(nr, r)| nr - r.tanh())
        .fold(f64::INFINITY, f64::min)
}

/// Geodesic ball of radius `r0` centred at the origin.
pub fn make_ball(n: usize, r0: f64, resolution: usize) -> Result<StarBody> {
    ensure!(r0 > 0.0 && r0.is_finite(), Argument, "ball radius must be positive, got {r0}");
    StarBody::from_fn(n, resolution, |_| r0)
}

/// Geodesic sphere of radius `radius` whose centre lies at distance
/// `offset` from the origin along the axis, on the side of angle `π`.
///
/// Each node solves `cosh R = cosh a cosh ρ + sinh a sinh ρ cos φ` for `ρ`,
/// so that `ρ(0) = R − a` and `ρ(π) = R + a`.
pub fn make_offcenter_ball(n: usize, radius: f64, offset: f64, resolution: usize) -> Result<StarBody> {
    ensure!(radius > 0.0, Argument, "radius must be positive, got {radius}");
    ensure!(
        (0.0..radius).contains(&offset),
        Argument,
        "offset must satisfy 0 <= a < R, got a = {offset}, R = {radius}"
    );
    let grid = Grid::shared(n, resolution)?;
    let (ca, sa, cr) = (offset.cosh(), offset.sinh(), radius.cosh());
    let nodes = grid
        .angles()
        .iter()
        .map(|&phi| offcenter_radius(ca, sa, cr, phi.cos(), radius - offset, radius + offset))
        .collect::<Result<Vec<_>>>()?;
    StarBody::on_grid(grid, nodes)
}

fn offcenter_radius(ca: f64, sa: f64, cr: f64, cphi: f64, lo: f64, hi: f64) -> Result<f64> {
    let residual = |rho: f64| ca * rho.cosh() + sa * rho.sinh() * cphi - cr;
    let (mut lo, mut hi) = (lo, hi);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..50 {
        let f = residual(x);
        if f.abs() <= 1e-14 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = ca * x.sinh() + sa * x.cosh() * cphi;
        let newton = x - f / d;
        x = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * hi {
            return Ok(x);
        }
    }
    if residual(x).abs() <= 1e-13 {
        return Ok(x);
    }
    Err(Error::Internal(format!("off-centre sphere solve failed (residual {:e})", residual(x))))
}

/// Ball of radius `r0` perturbed by `Σ a_m cos(m·angle + phase_m)`.
///
/// Phases are drawn from `seed` for closed curves and are zero for
/// axisymmetric profiles. While the result misses the h-convexity floor
/// `margin_min`, every amplitude is halved (at most 60 times).
pub fn make_perturbed_ball(
    n: usize,
    r0: f64,
    amplitudes: &BTreeMap<usize, f64>,
    resolution: usize,
    seed: u64,
) -> Result<StarBody> {
    make_perturbed_ball_with_margin(n, r0, amplitudes, resolution, seed, DEFAULT_MARGIN_MIN)
}

pub fn make_perturbed_ball_with_margin(
    n: usize,
    r0: f64,
    amplitudes: &BTreeMap<usize, f64>,
    resolution: usize,
    seed: u64,
    margin_min: f64,
) -> Result<StarBody> {
    ensure!(r0 > 0.0 && r0.is_finite(), Argument, "base radius must be positive, got {r0}");
    let grid = Grid::shared(n, resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: BTreeMap<usize, f64> = amplitudes
        .keys()
        .map(|&m| {
            let p = match grid.mode() {
                Mode::PeriodicCurve => rng.gen_range(0.0..2.0 * PI),
                Mode::AxisymmetricProfile => 0.0,
            };
            (m, p)
        })
        .collect();
    let mut scale = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let nodes: Vec<f64> = grid
            .angles()
            .iter()
            .map(|&t| {
                r0 + amplitudes
                    .iter()
                    .map(|(&m, &a)| scale * a * (m as f64 * t + phases[&m]).cos())
                    .sum::<f64>()
            })
            .collect();
        if nodes.iter().all(|&r| r > 0.0) {
            let body = StarBody::on_grid(grid.clone(), nodes)?;
            if body.h_convexity_margin()? >= margin_min {
                return Ok(body);
            }
        }
        scale *= 0.5;
    }
    Err(Error::Generation(format!(
        "no h-convex body with margin >= {margin_min} after {MAX_HALVINGS} halvings (r0 = {r0})"
    )))
}

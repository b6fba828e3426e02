//! Quermassintegral-preserving curvature flow of radial graphs.
//!
//! The surface moves by `∂X/∂t = (c(t) − F) ν` with the quotient speed
//! `F = (H_k/H_l)^{1/(k−l)}` and the nonlocal forcing
//! `c = ∫ H_l F dμ / ∫ H_l dμ`, which makes `W_l` stationary. On the radial
//! function this reads `∂r/∂t = (c − F) / ⟨∂_r, ν⟩`.
//!
//! Time stepping is Heun's method with the forward Euler predictor as the
//! embedded error estimate. The forcing is recomputed at both stages.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ballfuncs::BallFunctionTable;
use crate::error::{ensure, Error, Result};
use crate::integrals::{quermassintegrals, QuermassVector};
use crate::starbody::{support_margin, GeometryFrame, Mode, StarBody};

/// Smallest admissible step before a run is declared stalled.
pub const DT_FLOOR: f64 = 1e-12;
/// Tolerance on the h-convexity margin before a run is aborted.
pub const MARGIN_TOLERANCE: f64 = 1e-6;
/// Initial margins below this are flagged as fragile.
pub const FRAGILE_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Forcing {
    /// `c = ∫H_l F / ∫H_l`, keeping `W_l` fixed.
    #[default]
    PreserveWl,
    /// `c = 0`: pure contraction by `F`, for diagnostics.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub k: usize,
    pub l: usize,
    pub dt_initial: f64,
    pub dt_max: f64,
    pub cfl_safety: f64,
    pub t_max: f64,
    /// Stop once `pinching ratio − 1` falls to this value.
    pub converge_tol: f64,
    /// Bound on the embedded error estimate `max |r_Heun − r_Euler|`.
    pub step_error_tol: f64,
    #[serde(rename = "renormalize_W_l", alias = "renormalize_w_l")]
    pub renormalize_w_l: bool,
    /// Record a trace row every this many accepted steps.
    pub monitor_stride: usize,
    pub forcing: Forcing,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            k: 2,
            l: 0,
            dt_initial: 1e-4,
            dt_max: 1e-2,
            cfl_safety: 0.5,
            t_max: 100.0,
            converge_tol: 1e-6,
            step_error_tol: 1e-8,
            renormalize_w_l: false,
            monitor_stride: 1,
            forcing: Forcing::PreserveWl,
        }
    }
}

impl FlowConfig {
    pub fn with_exponents(k: usize, l: usize) -> Self {
        FlowConfig { k, l, ..Default::default() }
    }

    /// Checks the configuration against the ambient dimension `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        ensure!(n >= 2, Argument, "dimension must be >= 2, got {n}");
        ensure!(
            self.l < self.k && self.k < n,
            Argument,
            "need 0 <= l < k <= n-1, got k = {}, l = {}, n = {n}",
            self.k,
            self.l
        );
        let positive = [
            ("dt_initial", self.dt_initial),
            ("dt_max", self.dt_max),
            ("t_max", self.t_max),
            ("converge_tol", self.converge_tol),
            ("step_error_tol", self.step_error_tol),
        ];
        for (name, v) in positive {
            ensure!(v.is_finite() && v > 0.0, Argument, "{name} must be positive and finite, got {v}");
        }
        ensure!(
            self.cfl_safety > 0.0 && self.cfl_safety <= 1.0,
            Argument,
            "cfl_safety must lie in (0, 1], got {}",
            self.cfl_safety
        );
        ensure!(self.monitor_stride >= 1, Argument, "monitor_stride must be >= 1");
        Ok(())
    }
}

/// Speeds, forcing and velocity of one state.
#[derive(Clone, Debug)]
pub struct SpeedField {
    pub speed: Vec<f64>,
    pub c: f64,
    /// `∂r/∂t` at each node.
    pub velocity: Vec<f64>,
}

/// `F` at every node.
///
/// Same contract as [`crate::symfunc::CurvatureVector::flow_speed`]: any
/// nonpositive principal curvature is a domain error.
pub fn node_speeds(frame: &GeometryFrame, k: usize, l: usize) -> Result<Vec<f64>> {
    ensure!(l < k && k < frame.dimension(), Argument, "need l < k <= n-1, got k = {k}, l = {l}");
    if let Some(bad) = frame.kappa_meridian.iter().chain(&frame.kappa_rotational).find(|&&x| !(x > 0.0)) {
        return Err(Error::Domain(format!("principal curvature {bad:e} is not positive; speed undefined")));
    }
    let p = 1.0 / (k - l) as f64;
    frame
        .h(k)
        .iter()
        .zip(frame.h(l))
        .map(|(&hk, &hl)| {
            ensure!(hk > 0.0 && hl > 0.0, Domain, "H_{k} = {hk:e}, H_{l} = {hl:e}");
            let q = hk / hl;
            Ok(match k - l {
                1 => q,
                2 => q.sqrt(),
                _ => q.powf(p),
            })
        })
        .collect()
}

/// `c = ∫ H_l F dμ / ∫ H_l dμ` from precomputed speeds.
pub fn forcing_from_speeds(frame: &GeometryFrame, l: usize, speed: &[f64]) -> Result<f64> {
    let den = frame.integrate(frame.h(l));
    ensure!(den > 0.0, Domain, "∫H_{l} dμ = {den:e} is not positive");
    Ok(frame.integrate_product(frame.h(l), speed) / den)
}

/// The forcing that keeps `W_l` fixed.
pub fn forcing_c(frame: &GeometryFrame, k: usize, l: usize) -> Result<f64> {
    forcing_from_speeds(frame, l, &node_speeds(frame, k, l)?)
}

/// Same forcing written as `∫ H_k^{1/(k−l)} H_l^{1−1/(k−l)} dμ / ∫ H_l dμ`.
pub fn forcing_c_expanded(frame: &GeometryFrame, k: usize, l: usize) -> Result<f64> {
    ensure!(l < k && k < frame.dimension(), Argument, "need l < k <= n-1");
    let p = 1.0 / (k - l) as f64;
    let (hk, hl) = (frame.h(k), frame.h(l));
    ensure!(hk.iter().chain(hl).all(|&h| h > 0.0), Domain, "H_{k} and H_{l} must be positive");
    let num: Vec<f64> = hk.iter().zip(hl).map(|(a, b)| a.powf(p) * b.powf(1.0 - p)).collect();
    let den = frame.integrate(hl);
    Ok(frame.integrate(&num) / den)
}

/// `∂r/∂t = (c − F)/⟨∂_r, ν⟩`.
pub fn radial_velocity(frame: &GeometryFrame, c: f64, speed: &[f64]) -> Result<Vec<f64>> {
    frame
        .normal_radial
        .iter()
        .zip(speed)
        .map(|(&nr, &f)| {
            if nr > 0.0 {
                Ok((c - f) / nr)
            } else {
                Err(Error::Geometry(format!("⟨∂_r, ν⟩ = {nr:e}: the surface is no longer a radial graph")))
            }
        })
        .collect()
}

pub fn speed_field(frame: &GeometryFrame, config: &FlowConfig) -> Result<SpeedField> {
    let speed = node_speeds(frame, config.k, config.l)?;
    let c = match config.forcing {
        Forcing::PreserveWl => forcing_from_speeds(frame, config.l, &speed)?,
        Forcing::Zero => 0.0,
    };
    let velocity = radial_velocity(frame, c, &speed)?;
    Ok(SpeedField { speed, c, velocity })
}

/// Largest diffusion coefficient `Σ_i ∂F/∂λ_i / (r'² + sinh² r)` over nodes.
///
/// Uses `Σ_i ∂F/∂λ_i = F/(k−l) (k H_{k−1}/H_k − l H_{l−1}/H_l)`.
pub fn diffusion_bound(frame: &GeometryFrame, k: usize, l: usize) -> Result<f64> {
    let speed = node_speeds(frame, k, l)?;
    let (hk, hk1, hl) = (frame.h(k), frame.h(k - 1), frame.h(l));
    let m = (k - l) as f64;
    let mut d: f64 = 0.0;
    for i in 0..frame.len() {
        let lower = if l == 0 { 0.0 } else { l as f64 * frame.h(l - 1)[i] / hl[i] };
        let trace = speed[i] / m * (k as f64 * hk1[i] / hk[i] - lower);
        let s = frame.r[i].sinh();
        let w2 = frame.dr[i] * frame.dr[i] + s * s;
        d = d.max(trace / w2);
    }
    Ok(d)
}

/// Explicit stability limit `cfl_safety · 2 / (D · Λ)`, with `Λ` the
/// spectral radius bound of the discrete Laplacian.
pub fn cfl_limit(frame: &GeometryFrame, config: &FlowConfig) -> Result<f64> {
    let d = diffusion_bound(frame, config.k, config.l)?;
    Ok(config.cfl_safety * 2.0 / (d * frame.grid().laplacian_bound()).max(f64::MIN_POSITIVE))
}

/// `(max κ / min κ, min κ − 1)` over nodes and principal directions.
pub fn pinching_monitor(frame: &GeometryFrame) -> (f64, f64) {
    let (lo, hi) = frame.curvature_range();
    (hi / lo, lo - 1.0)
}

/// A body together with its geometry and flow velocity.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub body: StarBody,
    pub frame: GeometryFrame,
    pub field: SpeedField,
    /// Low-order parts lost when rounding the accepted node updates
    /// (compensated summation); the increments are many orders of magnitude
    /// below the radii over a long run.
    carry: Vec<f64>,
}

impl FlowState {
    pub fn new(body: StarBody, config: &FlowConfig, t: f64) -> Result<FlowState> {
        let frame = body.geometry()?;
        let field = speed_field(&frame, config)?;
        let carry = vec![0.0; body.resolution()];
        Ok(FlowState { t, body, frame, field, carry })
    }

    fn advanced(&self, nodes: Vec<f64>, config: &FlowConfig, dt: f64) -> Result<FlowState> {
        FlowState::new(self.body.with_nodes(nodes)?, config, self.t + dt)
    }

    /// `r + increment` with the rounding error carried to the next update.
    fn compensated(&self, increment: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = Vec::with_capacity(increment.len());
        let mut carry = Vec::with_capacity(increment.len());
        for ((&r, &d), &c) in self.body.nodes().iter().zip(increment).zip(&self.carry) {
            let y = d - c;
            let t = r + y;
            carry.push((t - r) - y);
            nodes.push(t);
        }
        (nodes, carry)
    }

    pub fn max_abs_c_minus_f(&self) -> f64 {
        self.field.speed.iter().map(|f| (self.field.c - f).abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub error_estimate: f64,
    pub dt_cfl: f64,
    /// Attempts rejected for accuracy.
    pub rejected_error: u32,
    /// Attempts rejected because a stage left the admissible domain.
    pub rejected_domain: u32,
    /// Suggested size of the next step.
    pub dt_next: f64,
}

fn is_domain_failure(e: &Error) -> bool {
    matches!(e, Error::Domain(_) | Error::Geometry(_) | Error::Numeric(_))
}

fn heun_stages(state: &FlowState, config: &FlowConfig, dt: f64) -> Result<(FlowState, f64)> {
    let r0 = state.body.nodes();
    let v0 = &state.field.velocity;
    let euler: Vec<f64> = r0.iter().zip(v0).map(|(r, v)| r + dt * v).collect();
    let mid = state.advanced(euler.clone(), config, dt)?;
    let increment: Vec<f64> = v0.iter().zip(&mid.field.velocity).map(|(a, b)| 0.5 * dt * (a + b)).collect();
    let (heun, carry) = state.compensated(&increment);
    let err = heun.iter().zip(&euler).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut next = state.advanced(heun, config, dt)?;
    next.carry = carry;
    Ok((next, err))
}

/// One Heun step of fixed size without error control.
pub fn step_fixed(state: &FlowState, config: &FlowConfig, dt: f64) -> Result<FlowState> {
    Ok(heun_stages(state, config, dt)?.0)
}

/// One accepted adaptive step starting from a trial size `dt_try`.
///
/// The step is capped by `dt_max`, the stability limit and `t_limit − t`.
/// Domain failures in either stage halve the step; accuracy failures shrink
/// it by the usual `0.9 (tol/err)^{1/2}` rule.
pub fn step_adaptive(
    state: &FlowState,
    config: &FlowConfig,
    dt_try: f64,
    t_limit: f64,
) -> Result<(FlowState, f64, StepDiagnostics)> {
    let dt_cfl = cfl_limit(&state.frame, config)?;
    let cap = config.dt_max.min(dt_cfl);
    let mut dt = dt_try.min(cap).min(t_limit - state.t);
    let mut diag = StepDiagnostics { dt_cfl, ..Default::default() };
    loop {
        if !(dt >= DT_FLOOR) {
            return Err(Error::Stall {
                t: state.t,
                reason: format!(
                    "step size {dt:e} below {DT_FLOOR:e} after {} accuracy and {} domain rejections",
                    diag.rejected_error, diag.rejected_domain
                ),
            });
        }
        match heun_stages(state, config, dt) {
            Err(e) if is_domain_failure(&e) => {
                diag.rejected_domain += 1;
                dt *= 0.5;
            }
            Err(e) => return Err(e),
            Ok((next, err)) => {
                if err > config.step_error_tol {
                    diag.rejected_error += 1;
                    dt *= (0.9 * (config.step_error_tol / err).sqrt()).clamp(0.1, 0.5);
                    continue;
                }
                let grow = if err > 0.0 { (0.9 * (config.step_error_tol / err).sqrt()).min(2.0) } else { 2.0 };
                diag.error_estimate = err;
                diag.dt_next = (dt * grow.max(1.0)).min(cap);
                return Ok((next, dt, diag));
            }
        }
    }
}

/// Adaptive step from `body` with trial size `config.dt_initial`.
pub fn step(body: &StarBody, config: &FlowConfig) -> Result<(StarBody, f64, StepDiagnostics)> {
    config.validate(body.dimension())?;
    let state = FlowState::new(body.clone(), config, 0.0)?;
    let (next, dt, diag) = step_adaptive(&state, config, config.dt_initial, f64::INFINITY)?;
    Ok((next.body, dt, diag))
}

/// Uniform radial shift restoring `W_l = target`.
pub fn renormalize(body: &StarBody, l: usize, target: f64) -> Result<StarBody> {
    let n = body.dimension();
    let mut b = body.clone();
    for _ in 0..4 {
        let frame = b.geometry()?;
        let w = quermassintegrals(&frame).w[l];
        let slope = (n - l) as f64 / n as f64 * frame.integrate_product(frame.h(l), &frame.normal_radial);
        ensure!(slope > 0.0, Domain, "W_{l} is not increasing under a radial shift");
        let delta = (target - w) / slope;
        b = b.with_nodes(b.nodes().iter().map(|r| r + delta).collect())?;
        if delta.abs() <= 1e-15 * b.nodes()[0].abs() {
            break;
        }
    }
    Ok(b)
}

/// One row of a flow trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub t: f64,
    pub dt: f64,
    pub c: f64,
    /// `W_0 … W_n`.
    pub w: Vec<f64>,
    /// `V_0 … V_{n−1}`.
    pub v: Vec<f64>,
    pub pinch: f64,
    pub hconvex_margin: f64,
    /// `min(⟨∂_r, ν⟩ − tanh r)`.
    pub support_margin: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// `(W_l(t) − W_l(0)) / W_l(0)`.
    pub wl_drift: f64,
    /// `(n−k)/n ∫ H_k (c − F) dμ`.
    pub dwk_formula: f64,
    /// Difference quotient of `W_k` over the previous row minus the
    /// trapezoidal average of `dwk_formula`.
    pub dwk_residual: f64,
    /// `(n−l)/n ∫ H_l (c − F) dμ`; zero up to rounding when preserving `W_l`.
    pub dwl_formula: f64,
    pub max_c_minus_f: f64,
    /// Sphere average of `r`.
    pub mean_radius: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub dimension: usize,
    pub k: usize,
    pub l: usize,
    pub records: Vec<TraceRecord>,
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Internal(format!("csv: {other:?}")),
    }
}

/// `(n−j)/n ∫ H_j (c − F) dμ`.
pub fn quermass_rate(frame: &GeometryFrame, field: &SpeedField, j: usize) -> f64 {
    let n = frame.dimension();
    if j >= n {
        return 0.0;
    }
    let normal: Vec<f64> = field.speed.iter().map(|f| field.c - f).collect();
    (n - j) as f64 / n as f64 * frame.integrate_product(frame.h(j), &normal)
}

impl FlowTrace {
    fn record(&mut self, state: &FlowState, step: u64, dt: f64, wl0: f64) {
        let frame = &state.frame;
        let q = quermassintegrals(frame);
        let (pinch, margin) = pinching_monitor(frame);
        let (r_min, r_max) = frame.r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
        let dwk_formula = quermass_rate(frame, &state.field, self.k);
        let dwk_residual = match self.records.last() {
            Some(prev) if state.t > prev.t => {
                let fd = (q.w[self.k] - prev.w[self.k]) / (state.t - prev.t);
                fd - 0.5 * (dwk_formula + prev.dwk_formula)
            }
            _ => 0.0,
        };
        self.records.push(TraceRecord {
            step,
            t: state.t,
            dt,
            c: state.field.c,
            wl_drift: (q.w[self.l] - wl0) / wl0,
            w: q.w,
            v: q.v,
            pinch,
            hconvex_margin: margin,
            support_margin: support_margin(frame),
            r_min,
            r_max,
            dwk_formula,
            dwk_residual,
            dwl_formula: quermass_rate(frame, &state.field, self.l),
            max_c_minus_f: state.max_abs_c_minus_f(),
            mean_radius: frame.grid().sphere_mean(&frame.r),
        });
    }

    pub fn csv_header(&self) -> Vec<String> {
        let n = self.dimension;
        let mut h: Vec<String> = ["step", "t", "dt", "c"].iter().map(|s| s.to_string()).collect();
        h.extend((0..=n).map(|k| format!("W_{k}")));
        h.extend((0..n).map(|j| format!("V_{j}")));
        h.extend(
            [
                "pinch",
                "hconvex_margin",
                "support_margin",
                "r_min",
                "r_max",
                "wl_drift",
                "dwk_formula",
                "dwk_residual",
                "dwl_formula",
                "max_c_minus_f",
                "mean_radius",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    /// Writes the trace as CSV. Floats use the shortest round-trip form, so
    /// equal traces give identical bytes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header()).map_err(csv_error)?;
        for r in &self.records {
            let mut fields = vec![r.step.to_string(), r.t.to_string(), r.dt.to_string(), r.c.to_string()];
            fields.extend(r.w.iter().chain(&r.v).map(|x| x.to_string()));
            fields.extend(
                [
                    r.pinch,
                    r.hconvex_margin,
                    r.support_margin,
                    r.r_min,
                    r.r_max,
                    r.wl_drift,
                    r.dwk_formula,
                    r.dwk_residual,
                    r.dwl_formula,
                    r.max_c_minus_f,
                    r.mean_radius,
                ]
                .iter()
                .map(|x| x.to_string()),
            );
            w.write_record(&fields).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Largest `W_k(t_{i+1}) − W_k(t_i)` over consecutive rows.
    pub fn max_increase(&self, k: usize) -> f64 {
        self.records.windows(2).map(|p| p[1].w[k] - p[0].w[k]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_wl_drift(&self) -> f64 {
        self.records.iter().map(|r| r.wl_drift.abs()).fold(0.0, f64::max)
    }

    /// Exponential rate of `pinch − 1`, fitted over rows with `t ≥ from_fraction · t_end`.
    pub fn fit_pinching_rate(&self, from_fraction: f64) -> Option<RateFit> {
        let t_end = self.records.last()?.t;
        let pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter(|r| r.t >= from_fraction * t_end && r.pinch > 1.0)
            .map(|r| (r.t, (r.pinch - 1.0).ln()))
            .collect();
        RateFit::linear(&pts)
    }
}

/// Least-squares line `y = slope·t + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

impl RateFit {
    pub fn linear(pts: &[(f64, f64)]) -> Option<RateFit> {
        if pts.len() < 3 {
            return None;
        }
        let m = pts.len() as f64;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / m, b + p.1 / m));
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for &(x, y) in pts {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
            syy += (y - my) * (y - my);
        }
        if sxx == 0.0 {
            return None;
        }
        let slope = sxy / sxx;
        let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
        Some(RateFit { slope, intercept: my - slope * mx, r_squared, points: pts.len() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "kebab-case")]
pub enum FlowStatus {
    Converged,
    TimeLimit,
    Stalled(String),
    MonitorViolation(String),
}

/// Outcome of [`run`].
#[derive(Clone, Debug)]
pub struct FlowRun {
    pub status: FlowStatus,
    pub final_body: StarBody,
    pub trace: FlowTrace,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    pub initial_quermass: QuermassVector,
    /// `f_l^{-1}(W_l(K_0))`, the radius of the limit sphere.
    pub limit_radius: f64,
    pub final_mean_radius: f64,
    pub final_max_c_minus_f: f64,
    /// Initial h-convexity margin below [`FRAGILE_MARGIN`].
    pub fragile: bool,
}

impl FlowRun {
    pub fn converged(&self) -> bool {
        self.status == FlowStatus::Converged
    }
}

/// Integrates the flow until `pinch − 1 ≤ converge_tol` or `t ≥ t_max`.
///
/// Invalid configurations and inadmissible initial bodies are errors;
/// stalls and monitor violations end the run with the trace so far.
pub fn run(body: &StarBody, config: &FlowConfig) -> Result<FlowRun> {
    run_observed(body, config, |_| {})
}

/// [`run`] with a callback invoked on every accepted state.
pub fn run_observed<O: FnMut(&FlowState)>(body: &StarBody, config: &FlowConfig, mut observe: O) -> Result<FlowRun> {
    let n = body.dimension();
    config.validate(n)?;
    let frame = body.geometry()?;
    let (_, margin0) = pinching_monitor(&frame);
    ensure!(margin0 >= -MARGIN_TOLERANCE, Domain, "initial body is not h-convex (margin {margin0:e})");
    let initial_quermass = quermassintegrals(&frame);
    let wl0 = initial_quermass.w[config.l];
    let limit_radius = BallFunctionTable::shared(n)?.f_inverse(config.l, wl0)?;

    let mut state = FlowState::new(body.clone(), config, 0.0)?;
    let mut trace = FlowTrace { dimension: n, k: config.k, l: config.l, records: Vec::new() };
    trace.record(&state, 0, 0.0, wl0);
    observe(&state);

    let (mut accepted, mut rejected) = (0u64, 0u64);
    let mut dt_try = config.dt_initial;
    let mut last_dt = 0.0;
    let status = loop {
        let (pinch, margin) = pinching_monitor(&state.frame);
        if margin < -MARGIN_TOLERANCE {
            break FlowStatus::MonitorViolation(format!(
                "h-convexity margin {margin:e} at t = {}; discretization too coarse",
                state.t
            ));
        }
        if pinch - 1.0 <= config.converge_tol {
            break FlowStatus::Converged;
        }
        if state.t >= config.t_max {
            break FlowStatus::TimeLimit;
        }
        match step_adaptive(&state, config, dt_try, config.t_max) {
            Ok((next, dt, diag)) => {
                rejected += (diag.rejected_error + diag.rejected_domain) as u64;
                accepted += 1;
                state = next;
                last_dt = dt;
                dt_try = diag.dt_next;
                if config.renormalize_w_l && accepted % config.monitor_stride as u64 == 0 {
                    let b = renormalize(&state.body, config.l, wl0)?;
                    state = FlowState::new(b, config, state.t)?;
                }
                if accepted % config.monitor_stride as u64 == 0 {
                    trace.record(&state, accepted, dt, wl0);
                }
                observe(&state);
            }
            Err(Error::Stall { reason, .. }) => break FlowStatus::Stalled(reason),
            Err(e) if is_domain_failure(&e) => break FlowStatus::Stalled(e.to_string()),
            Err(e) => return Err(e),
        }
    };
    if trace.records.last().map(|r| r.step) != Some(accepted) {
        trace.record(&state, accepted, last_dt, wl0);
    }
    let final_mean_radius = state.frame.grid().sphere_mean(&state.frame.r);
    Ok(FlowRun {
        status,
        final_max_c_minus_f: state.max_abs_c_minus_f(),
        final_body: state.body,
        trace,
        accepted_steps: accepted,
        rejected_steps: rejected,
        initial_quermass,
        limit_radius,
        final_mean_radius,
        fragile: margin0 < FRAGILE_MARGIN,
    })
}

/// Difference-quotient minus formula for the evolution equations at one state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationalResiduals {
    pub h: f64,
    pub volume: f64,
    pub area: f64,
    /// Indexed by `k`: `d∫H_k/dt`.
    pub curvature_integrals: Vec<f64>,
    /// Indexed by `k`: `dW_k/dt`, `k = 0..n−1`.
    pub quermass: Vec<f64>,
    /// `dW_l/dt` from the formula alone.
    pub wl_formula: f64,
}

impl VariationalResiduals {
    pub fn max_abs(&self) -> f64 {
        [self.volume, self.area]
            .iter()
            .chain(&self.curvature_integrals)
            .chain(&self.quermass)
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Checks the evolution equations at the state `body`.
///
/// The flow velocity `v` is frozen and the functionals are differenced
/// along `r ± h v`; the central quotient equals the time derivative up to
/// `O(h²)` plus quadrature error.
pub fn variational_check(body: &StarBody, config: &FlowConfig, h: f64) -> Result<VariationalResiduals> {
    let n = body.dimension();
    config.validate(n)?;
    ensure!(h > 0.0, Argument, "difference step must be positive");
    let state = FlowState::new(body.clone(), config, 0.0)?;
    let shifted = |sign: f64| -> Result<QuermassVector> {
        let nodes = body.nodes().iter().zip(&state.field.velocity).map(|(r, v)| r + sign * h * v).collect();
        Ok(quermassintegrals(&body.with_nodes(nodes)?.geometry()?))
    };
    let (qp, qm) = (shifted(1.0)?, shifted(-1.0)?);
    let frame = &state.frame;
    let normal: Vec<f64> = state.field.speed.iter().map(|f| state.field.c - f).collect();
    let diff = |a: f64, b: f64| (a - b) / (2.0 * h);

    let volume = diff(qp.w[0], qm.w[0]) - frame.integrate(&normal);
    let curvature_integrals: Vec<f64> = (0..n)
        .map(|k| {
            let weight: Vec<f64> = (0..frame.len())
                .map(|i| {
                    let hi = if k + 1 < n { frame.h(k + 1)[i] } else { 0.0 };
                    let lo = if k >= 1 { frame.h(k - 1)[i] } else { 0.0 };
                    (n - 1 - k) as f64 * hi + k as f64 * lo
                })
                .collect();
            diff(qp.curvature_integral(k), qm.curvature_integral(k)) - frame.integrate_product(&weight, &normal)
        })
        .collect();
    let quermass: Vec<f64> = (0..n).map(|k| diff(qp.w[k], qm.w[k]) - quermass_rate(frame, &state.field, k)).collect();
    Ok(VariationalResiduals {
        h,
        volume,
        area: curvature_integrals[0],
        curvature_integrals,
        quermass,
        wl_formula: quermass_rate(frame, &state.field, config.l),
    })
}

/// Inradius and outradius about the best center found by a search that
/// minimises `outradius − inradius`; along the symmetry axis for profiles
/// and over the plane for curves.
pub fn best_fit_radii(body: &StarBody) -> (f64, f64) {
    let grid = body.grid();
    let r = body.nodes();
    let angles = grid.angles();
    let spread = |x: f64, y: f64| -> (f64, f64) {
        let d = x.hypot(y);
        let alpha = y.atan2(x);
        let (cd, sd) = (d.cosh(), d.sinh());
        r.iter().zip(angles).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&ri, &th)| {
            let ch = (cd * ri.cosh() - sd * ri.sinh() * (th - alpha).cos()).max(1.0);
            let dist = ch.acosh();
            (lo.min(dist), hi.max(dist))
        })
    };
    let width = |x: f64, y: f64| {
        let (a, b) = spread(x, y);
        b - a
    };
    let bound = 0.5 * r.iter().copied().fold(f64::INFINITY, f64::min);
    let golden = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| -> f64 {
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..80 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        0.5 * (a + b)
    };
    let (x, y) = match grid.mode() {
        Mode::AxisymmetricProfile => (golden(&|x| width(x, 0.0), -bound, bound), 0.0),
        Mode::PeriodicCurve => {
            let (mut x, mut y) = (0.0, 0.0);
            for _ in 0..6 {
                x = golden(&|t| width(t, y), -bound, bound);
                y = golden(&|t| width(x, t), -bound, bound);
            }
            (x, y)
        }
    };
    spread(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::starbody::{make_ball, make_offcenter_ball, make_perturbed_ball};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn perturbed(n: usize, res: usize) -> StarBody {
        make_perturbed_ball(n, 1.5, &BTreeMap::from([(2, 0.05)]), res, 0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::with_exponents(2, 0).validate(3).is_ok());
        assert!(FlowConfig::with_exponents(3, 0).validate(3).is_err());
        assert!(FlowConfig::with_exponents(1, 1).validate(3).is_err());
        let bad = FlowConfig { cfl_safety: 1.5, ..Default::default() };
        assert!(bad.validate(3).is_err());
        let json = r#"{"k": 2, "l": 0, "renormalize_W_l": true}"#;
        let c: FlowConfig = serde_json::from_str(json).unwrap();
        assert!(c.renormalize_w_l && c.cfl_safety == 0.5);
        assert!(serde_json::from_str::<FlowConfig>(r#"{"kk": 1}"#).is_err());
    }

    #[test]
    fn fast_paths_match_generic_speed() {
        for n in [2usize, 3, 5] {
            let b = make_perturbed_ball(n, 1.2, &BTreeMap::from([(2, 0.05), (3, 0.02)]), 32, 2).unwrap();
            let f = b.geometry().unwrap();
            for l in 0..n - 1 {
                for k in l + 1..n {
                    let s = node_speeds(&f, k, l).unwrap();
                    let mut d: f64 = 0.0;
                    for i in 0..f.len() {
                        let lam = f.curvatures(i);
                        assert_relative_eq!(s[i], lam.flow_speed(k, l).unwrap(), max_relative = 1e-13);
                        let w2 = f.dr[i].powi(2) + f.r[i].sinh().powi(2);
                        d = d.max(lam.flow_speed_gradient(k, l).unwrap().iter().sum::<f64>() / w2);
                    }
                    assert_relative_eq!(diffusion_bound(&f, k, l).unwrap(), d, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn ball_is_stationary() {
        for n in 2..=5 {
            let b = make_ball(n, 0.9, 32).unwrap();
            let f = b.geometry().unwrap();
            for l in 0..n - 1 {
                for k in l + 1..n {
                    let c = forcing_c(&f, k, l).unwrap();
                    assert_relative_eq!(c, 1.0 / 0.9f64.tanh(), max_relative = 1e-13);
                    let field = speed_field(&f, &FlowConfig::with_exponents(k, l)).unwrap();
                    assert!(field.velocity.iter().all(|v| v.abs() < 1e-13));
                }
            }
            let (next, _, _) = step(&b, &FlowConfig::with_exponents(1, 0)).unwrap();
            assert!(next.nodes().iter().all(|r| (r - 0.9).abs() < 1e-14));
        }
    }

    #[test]
    fn forcing_forms_agree_and_are_bracketed() {
        let f = perturbed(3, 64).geometry().unwrap();
        let c = forcing_c(&f, 2, 0).unwrap();
        assert_relative_eq!(c, forcing_c_expanded(&f, 2, 0).unwrap(), max_relative = 1e-13);
        let s = node_speeds(&f, 2, 0).unwrap();
        let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(lo <= c && c <= hi && lo < hi);
    }

    #[test]
    fn velocity_sign_and_smoothness() {
        let b = perturbed(3, 64);
        let f = b.geometry().unwrap();
        let field = speed_field(&f, &FlowConfig::with_exponents(2, 0)).unwrap();
        let imax = (0..f.len()).max_by(|&i, &j| f.r[i].partial_cmp(&f.r[j]).unwrap()).unwrap();
        let imin = (0..f.len()).min_by(|&i, &j| f.r[i].partial_cmp(&f.r[j]).unwrap()).unwrap();
        assert!(field.velocity[imax] < 0.0 && field.velocity[imin] > 0.0);
        let amps = f.grid().mode_amplitudes(&field.velocity);
        assert!(amps[64 / 3..].iter().all(|a| *a < 1e-10));
    }

    #[test]
    fn heun_conserves_to_third_order_per_step() {
        let b = perturbed(3, 48);
        let cfg = FlowConfig::with_exponents(2, 0);
        let s = FlowState::new(b, &cfg, 0.0).unwrap();
        let v0 = quermassintegrals(&s.frame).w[0];
        let drift = |dt: f64| (quermassintegrals(&step_fixed(&s, &cfg, dt).unwrap().frame).w[0] - v0).abs();
        let (a, b) = (drift(2e-3), drift(1e-3));
        assert!(a / b > 4.0, "per-step drift ratio {}", a / b);
    }

    #[test]
    fn domain_failures_reject_and_halve() {
        let b = perturbed(3, 32);
        let cfg = FlowConfig { dt_max: 10.0, cfl_safety: 1.0, step_error_tol: 1.0, ..FlowConfig::with_exponents(2, 0) };
        let s = FlowState::new(b, &cfg, 0.0).unwrap();
        // far beyond the stability limit the predictor leaves the positive cone
        let huge = 50.0 * cfl_limit(&s.frame, &cfg).unwrap();
        assert!(matches!(heun_stages(&s, &cfg, 1e3 * huge), Err(ref e) if is_domain_failure(e)));
        let (_, dt, diag) = step_adaptive(&s, &FlowConfig { cfl_safety: 1.0, ..cfg.clone() }, 1e3 * huge, f64::INFINITY).unwrap();
        assert!(dt > 0.0 && diag.error_estimate <= 1.0);
    }

    #[test]
    fn ball_run_converges_immediately() {
        let run = run(&make_ball(3, 1.1, 32).unwrap(), &FlowConfig::with_exponents(2, 1)).unwrap();
        assert!(run.converged());
        assert_eq!(run.accepted_steps, 0);
        assert_eq!(run.trace.records.len(), 1);
        assert_relative_eq!(run.limit_radius, 1.1, max_relative = 1e-11);
        assert_relative_eq!(run.final_mean_radius, 1.1, max_relative = 1e-14);
    }

    #[test]
    fn short_run_preserves_wl_and_decreases_wk() {
        for (n, k, l) in [(2usize, 1usize, 0usize), (3, 2, 1), (4, 3, 0), (4, 2, 1)] {
            let b = if n == 2 {
                make_perturbed_ball(2, 1.0, &BTreeMap::from([(2, 0.04), (3, 0.02)]), 32, 5).unwrap()
            } else {
                perturbed(n, 32)
            };
            let cfg = FlowConfig { t_max: 0.5, converge_tol: 1e-4, ..FlowConfig::with_exponents(k, l) };
            let run = run(&b, &cfg).unwrap();
            let t = &run.trace;
            assert!(t.max_abs_wl_drift() < 1e-6, "n = {n}: drift {}", t.max_abs_wl_drift());
            let w0 = t.records[0].w[k];
            assert!(t.max_increase(k) <= 1e-9 * w0, "n = {n}, k = {k}");
            assert!(t.records.iter().all(|r| r.dwl_formula.abs() < 1e-10 * w0));
            let first = &t.records[0];
            let last = t.records.last().unwrap();
            assert!(last.pinch < first.pinch);
        }
    }

    #[test]
    fn contraction_mode_shrinks_volume() {
        let b = perturbed(3, 32);
        let cfg = FlowConfig { forcing: Forcing::Zero, ..FlowConfig::with_exponents(2, 0) };
        let res = variational_check(&b, &cfg, 1e-3).unwrap();
        let f = b.geometry().unwrap();
        let speed = node_speeds(&f, 2, 0).unwrap();
        let rate = -f.integrate(&speed);
        assert!(rate < 0.0);
        assert!(res.volume.abs() < 1e-6 * rate.abs());
    }

    #[test]
    fn variational_residuals_are_second_order() {
        let b = perturbed(3, 48);
        let cfg = FlowConfig::with_exponents(2, 0);
        let a = variational_check(&b, &cfg, 4e-2).unwrap();
        let c = variational_check(&b, &cfg, 2e-2).unwrap();
        for k in 1..3 {
            let ratio = a.quermass[k] / c.quermass[k];
            assert!((3.5..4.5).contains(&ratio), "k = {k}: ratio {ratio}");
        }
        assert!(a.wl_formula.abs() < 1e-13);
    }

    #[test]
    fn renormalization_restores_wl() {
        let b = perturbed(3, 32);
        let target = quermassintegrals(&b.geometry().unwrap()).w[1] * 1.001;
        let fixed = renormalize(&b, 1, target).unwrap();
        assert_relative_eq!(quermassintegrals(&fixed.geometry().unwrap()).w[1], target, max_relative = 1e-13);
    }

    #[test]
    fn best_fit_finds_offcenter_spheres() {
        for n in [2usize, 3] {
            let b = make_offcenter_ball(n, 1.2, 0.3, 64).unwrap();
            let (rin, rout) = best_fit_radii(&b);
            assert_relative_eq!(rin, 1.2, max_relative = 1e-6);
            assert_relative_eq!(rout, 1.2, max_relative = 1e-6);
        }
    }

    #[test]
    fn rate_fit_recovers_slope() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, -0.7 * i as f64 + 2.0)).collect();
        let fit = RateFit::linear(&pts).unwrap();
        assert_relative_eq!(fit.slope, -0.7, max_relative = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, max_relative = 1e-12);
    }
}

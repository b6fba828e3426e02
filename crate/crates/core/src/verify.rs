//! Numerical verification of the quermassintegral and curvature-integral
//! inequalities over generated corpora of h-convex bodies.
//!
//! Every check yields a [`DeficitReport`] with `deficit = lhs − rhs`, which
//! is nonnegative for admissible bodies and zero on geodesic balls. A check
//! is a violation only when its relative deficit falls below
//! `−(tolerance + allowance)`, where the allowance is the body's own
//! Minkowski-identity residual, a measure of its discretization error.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ballfuncs::BallFunctionTable;
use crate::error::{ensure, Result};
use crate::flow::{csv_error, FlowTrace};
use crate::integrals::{heintze_karcher_deficit, max_minkowski_residual, quermassintegrals, relative, QuermassVector};
use crate::starbody::{make_ball, make_offcenter_ball, make_perturbed_ball_with_margin, GeometryFrame, StarBody};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// `W_k ≥ f_k(f_l^{-1}(W_l))`, `0 ≤ l < k ≤ n−1`.
    QuermassAlexandrovFenchel,
    /// `∫H_k ≥ n f_{k+1}(f_l^{-1}(W_l)) + nk/(n−k+1) f_{k−1}(f_l^{-1}(W_l))`.
    CurvatureGivenQuermass,
    /// `∫H_k ≥ g_{k+1}(W_{k−1})`, `1 ≤ k ≤ n−1`.
    CurvatureGivenLowerQuermass,
    /// `∫H_k ≥ h_k(∫H_{k−2})`, `2 ≤ k ≤ n−1`.
    CurvatureSingleStep,
    /// `∫H_k ≥ h_k ∘ h_{k−2} ∘ … ∘ h_{l+2}(∫H_l)`, `k − l` even.
    CurvatureChain,
    /// `∫H_k ≥ ω[(A/ω)^{2/k} + (A/ω)^{(2/k)(n−k−1)/(n−1)}]^{k/2}`, `n ≥ 3`.
    CurvatureGivenArea,
    /// `∫ cosh r / H_1 dμ ≥ ∫ u dμ`.
    HeintzeKarcher,
    /// `L² ≥ 4πA + A²`, curves only.
    IsoperimetricH2,
}

impl CheckKind {
    pub const ALL: [CheckKind; 8] = [
        CheckKind::QuermassAlexandrovFenchel,
        CheckKind::CurvatureGivenQuermass,
        CheckKind::CurvatureGivenLowerQuermass,
        CheckKind::CurvatureSingleStep,
        CheckKind::CurvatureChain,
        CheckKind::CurvatureGivenArea,
        CheckKind::HeintzeKarcher,
        CheckKind::IsoperimetricH2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::QuermassAlexandrovFenchel => "quermass-alexandrov-fenchel",
            CheckKind::CurvatureGivenQuermass => "curvature-given-quermass",
            CheckKind::CurvatureGivenLowerQuermass => "curvature-given-lower-quermass",
            CheckKind::CurvatureSingleStep => "curvature-single-step",
            CheckKind::CurvatureChain => "curvature-chain",
            CheckKind::CurvatureGivenArea => "curvature-given-area",
            CheckKind::HeintzeKarcher => "heintze-karcher",
            CheckKind::IsoperimetricH2 => "isoperimetric-h2",
        }
    }

    /// Admissible `(k, l)` parameters in dimension `n`; empty when the check
    /// does not apply.
    pub fn parameters(self, n: usize) -> Vec<(Option<usize>, Option<usize>)> {
        let pairs = |keep: &dyn Fn(usize, usize) -> bool| -> Vec<(Option<usize>, Option<usize>)> {
            let mut v = Vec::new();
            for k in 1..n {
                for l in 0..k {
                    if keep(k, l) {
                        v.push((Some(k), Some(l)));
                    }
                }
            }
            v
        };
        match self {
            CheckKind::QuermassAlexandrovFenchel | CheckKind::CurvatureGivenQuermass => pairs(&|_, _| true),
            CheckKind::CurvatureChain => pairs(&|k, l| (k - l) % 2 == 0),
            CheckKind::CurvatureGivenLowerQuermass => (1..n).map(|k| (Some(k), None)).collect(),
            CheckKind::CurvatureSingleStep => (2..n).map(|k| (Some(k), None)).collect(),
            CheckKind::CurvatureGivenArea if n >= 3 => (1..n).map(|k| (Some(k), None)).collect(),
            CheckKind::CurvatureGivenArea => Vec::new(),
            CheckKind::HeintzeKarcher => vec![(None, None)],
            CheckKind::IsoperimetricH2 if n == 2 => vec![(None, None)],
            CheckKind::IsoperimetricH2 => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeficitReport {
    pub name: String,
    pub n: usize,
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub deficit: f64,
    /// `deficit / |rhs|` (absolute below [`crate::integrals::RELATIVE_FLOOR`]).
    pub relative: f64,
    pub equality_expected: bool,
    pub body_id: String,
    pub seed: Option<u64>,
    /// Discretization allowance added to the tolerance.
    pub allowance: f64,
    pub violation: bool,
    /// Violation on a body generated with a margin below the standard floor.
    pub fragile: bool,
}

/// A body with the data every check needs.
#[derive(Clone, Debug)]
pub struct EvaluatedBody {
    pub id: String,
    pub seed: Option<u64>,
    pub is_ball: bool,
    pub body: StarBody,
    pub frame: GeometryFrame,
    pub quermass: QuermassVector,
    pub minkowski_residual: f64,
}

impl EvaluatedBody {
    pub fn new(id: impl Into<String>, seed: Option<u64>, is_ball: bool, body: StarBody) -> Result<Self> {
        let frame = body.geometry()?;
        let quermass = quermassintegrals(&frame);
        let minkowski_residual = max_minkowski_residual(&frame);
        Ok(EvaluatedBody { id: id.into(), seed, is_ball, body, frame, quermass, minkowski_residual })
    }

    pub fn dimension(&self) -> usize {
        self.body.dimension()
    }

    fn report(&self, kind: CheckKind, k: Option<usize>, l: Option<usize>, lhs: f64, rhs: f64) -> DeficitReport {
        let deficit = lhs - rhs;
        DeficitReport {
            name: kind.name().to_string(),
            n: self.dimension(),
            k,
            l,
            lhs,
            rhs,
            deficit,
            relative: relative(deficit, rhs),
            equality_expected: self.is_ball,
            body_id: self.id.clone(),
            seed: self.seed,
            allowance: self.minkowski_residual,
            violation: false,
            fragile: false,
        }
    }

    fn table(&self) -> Result<std::sync::Arc<BallFunctionTable>> {
        BallFunctionTable::shared(self.dimension())
    }

    pub fn check_quermass(&self, k: usize, l: usize) -> Result<DeficitReport> {
        let n = self.dimension();
        ensure!(l < k && k < n, Argument, "need 0 <= l < k <= n-1");
        let t = self.table()?;
        let rhs = t.f(k, t.f_inverse(l, self.quermass.w[l])?)?;
        Ok(self.report(CheckKind::QuermassAlexandrovFenchel, Some(k), Some(l), self.quermass.w[k], rhs))
    }

    pub fn check_curvature_given_quermass(&self, k: usize, l: usize) -> Result<DeficitReport> {
        let n = self.dimension();
        ensure!(l < k && k < n, Argument, "need 0 <= l < k <= n-1");
        let rhs = self.table()?.curvature_integral_given(k, l, self.quermass.w[l])?;
        Ok(self.report(CheckKind::CurvatureGivenQuermass, Some(k), Some(l), self.quermass.curvature_integral(k), rhs))
    }

    pub fn check_curvature_given_lower_quermass(&self, k: usize) -> Result<DeficitReport> {
        ensure!(1 <= k && k < self.dimension(), Argument, "need 1 <= k <= n-1");
        let rhs = self.table()?.g(k + 1, self.quermass.w[k - 1])?;
        Ok(self.report(CheckKind::CurvatureGivenLowerQuermass, Some(k), None, self.quermass.curvature_integral(k), rhs))
    }

    pub fn check_single_step(&self, k: usize) -> Result<DeficitReport> {
        let rhs = self.table()?.h(k, self.quermass.curvature_integral(k - 2))?;
        Ok(self.report(CheckKind::CurvatureSingleStep, Some(k), None, self.quermass.curvature_integral(k), rhs))
    }

    pub fn check_chain(&self, k: usize, l: usize) -> Result<DeficitReport> {
        let rhs = self.table()?.h_chain(k, l, self.quermass.curvature_integral(l))?;
        Ok(self.report(CheckKind::CurvatureChain, Some(k), Some(l), self.quermass.curvature_integral(k), rhs))
    }

    pub fn check_area(&self, k: usize) -> Result<DeficitReport> {
        ensure!(self.dimension() >= 3, Argument, "the area bound is stated for n >= 3");
        let rhs = self.table()?.area_bound(self.quermass.area(), k)?;
        Ok(self.report(CheckKind::CurvatureGivenArea, Some(k), None, self.quermass.curvature_integral(k), rhs))
    }

    pub fn check_heintze_karcher(&self) -> Result<DeficitReport> {
        let rhs = self.frame.integrate(&self.frame.support);
        let lhs = rhs + heintze_karcher_deficit(&self.frame)?;
        Ok(self.report(CheckKind::HeintzeKarcher, None, None, lhs, rhs))
    }

    pub fn check_isoperimetric(&self) -> Result<DeficitReport> {
        ensure!(self.dimension() == 2, Argument, "the isoperimetric check is for curves");
        let (len, area) = (self.quermass.area(), self.quermass.volume());
        Ok(self.report(CheckKind::IsoperimetricH2, None, None, len * len, 4.0 * PI * area + area * area))
    }

    pub fn check(&self, kind: CheckKind, k: Option<usize>, l: Option<usize>) -> Result<DeficitReport> {
        let need = |x: Option<usize>| x.ok_or_else(|| crate::Error::Argument(format!("{} needs its index", kind.name())));
        match kind {
            CheckKind::QuermassAlexandrovFenchel => self.check_quermass(need(k)?, need(l)?),
            CheckKind::CurvatureGivenQuermass => self.check_curvature_given_quermass(need(k)?, need(l)?),
            CheckKind::CurvatureGivenLowerQuermass => self.check_curvature_given_lower_quermass(need(k)?),
            CheckKind::CurvatureSingleStep => self.check_single_step(need(k)?),
            CheckKind::CurvatureChain => self.check_chain(need(k)?, need(l)?),
            CheckKind::CurvatureGivenArea => self.check_area(need(k)?),
            CheckKind::HeintzeKarcher => self.check_heintze_karcher(),
            CheckKind::IsoperimetricH2 => self.check_isoperimetric(),
        }
    }

    /// All admissible instances of `kinds` (every kind when empty).
    pub fn check_all(&self, kinds: &[CheckKind]) -> Result<Vec<DeficitReport>> {
        let kinds: &[CheckKind] = if kinds.is_empty() { &CheckKind::ALL } else { kinds };
        let mut out = Vec::new();
        for &kind in kinds {
            for (k, l) in kind.parameters(self.dimension()) {
                out.push(self.check(kind, k, l)?);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub dimensions: Vec<usize>,
    /// Bodies per dimension.
    pub count: usize,
    pub resolution: usize,
    pub seed: u64,
    /// h-convexity floor passed to the generator.
    pub margin_min: f64,
    /// Every `ball_every`-th body is a centred ball and the one halfway
    /// between is an off-centre ball; 0 disables balls.
    pub ball_every: usize,
    pub radius_range: (f64, f64),
    pub max_mode: usize,
    /// Largest amplitude as a fraction of the base radius.
    pub max_relative_amplitude: f64,
    /// Low-margin corpus; its violations are reported as fragile.
    pub stress: bool,
    pub extra_bodies: Vec<PathBuf>,
    /// Bodies made only of balls.
    pub balls_only: bool,
    /// Relative tolerance before a negative deficit is a violation.
    pub tolerance: f64,
    /// Bound on `|relative deficit|` for balls.
    pub equality_tolerance: f64,
    pub checks: Vec<CheckKind>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            dimensions: vec![2, 3, 4, 5],
            count: 100,
            resolution: 64,
            seed: 0,
            margin_min: crate::starbody::DEFAULT_MARGIN_MIN,
            ball_every: 10,
            radius_range: (0.4, 2.0),
            max_mode: 6,
            max_relative_amplitude: 0.15,
            stress: false,
            extra_bodies: Vec::new(),
            balls_only: false,
            tolerance: 1e-7,
            equality_tolerance: 1e-8,
            checks: Vec::new(),
        }
    }
}

/// Margin floor of the stress profile.
pub const STRESS_MARGIN: f64 = 1e-5;

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.dimensions.iter().all(|&n| n >= 2), Argument, "dimensions must be >= 2");
        ensure!(self.resolution >= 8, Argument, "resolution must be >= 8");
        let (lo, hi) = self.radius_range;
        ensure!(0.0 < lo && lo <= hi && hi < 8.0, Argument, "radius_range must satisfy 0 < lo <= hi < 8");
        ensure!(self.max_mode >= 1, Argument, "max_mode must be >= 1");
        ensure!(self.tolerance >= 0.0 && self.equality_tolerance >= 0.0, Argument, "tolerances must be >= 0");
        ensure!(self.margin_min > 0.0, Argument, "margin_min must be positive");
        Ok(())
    }

    fn effective_margin(&self) -> f64 {
        if self.stress {
            STRESS_MARGIN
        } else {
            self.margin_min
        }
    }

    /// Seed of body `index` in dimension `n`.
    pub fn body_seed(&self, n: usize, index: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(n as u64 * 100_000 + index as u64)
    }
}

/// Recipe for one corpus member.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BodySpec {
    Ball { n: usize, radius: f64 },
    OffcenterBall { n: usize, radius: f64, offset: f64 },
    Perturbed { n: usize, radius: f64, amplitudes: BTreeMap<usize, f64> },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusEntry {
    pub id: String,
    pub seed: Option<u64>,
    pub spec: BodySpec,
}

/// Deterministic list of corpus members, in dimension then index order.
pub fn corpus_entries(config: &CorpusConfig) -> Vec<CorpusEntry> {
    let mut out = Vec::new();
    for &n in &config.dimensions {
        for i in 0..config.count {
            let seed = config.body_seed(n, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = config.radius_range;
            let radius = if lo < hi { rng.gen_range(lo..hi) } else { lo };
            let spec = if config.balls_only || (config.ball_every > 0 && i % config.ball_every == 0) {
                BodySpec::Ball { n, radius }
            } else if config.ball_every > 1 && i % config.ball_every == config.ball_every / 2 {
                BodySpec::OffcenterBall { n, radius, offset: rng.gen_range(0.0..0.5) * radius }
            } else {
                let modes = rng.gen_range(1..=3usize);
                let low = if n == 2 { 1 } else { 2 };
                let amplitudes = (0..modes)
                    .map(|_| {
                        let m = rng.gen_range(low..=config.max_mode.max(low));
                        (m, rng.gen_range(-1.0..1.0) * config.max_relative_amplitude * radius)
                    })
                    .collect();
                BodySpec::Perturbed { n, radius, amplitudes }
            };
            out.push(CorpusEntry { id: format!("n{n}-{i:04}"), seed: Some(seed), spec });
        }
    }
    for (j, path) in config.extra_bodies.iter().enumerate() {
        out.push(CorpusEntry { id: format!("file{j}:{}", path.display()), seed: None, spec: BodySpec::File { path: path.clone() } });
    }
    out
}

/// Builds the body of one corpus entry.
pub fn build_body(entry: &CorpusEntry, config: &CorpusConfig) -> Result<(StarBody, bool)> {
    let res = config.resolution;
    match &entry.spec {
        BodySpec::Ball { n, radius } => Ok((make_ball(*n, *radius, res)?, true)),
        BodySpec::OffcenterBall { n, radius, offset } => Ok((make_offcenter_ball(*n, *radius, *offset, res)?, true)),
        BodySpec::Perturbed { n, radius, amplitudes } => Ok((
            make_perturbed_ball_with_margin(*n, *radius, amplitudes, res, entry.seed.unwrap_or(0), config.effective_margin())?,
            false,
        )),
        BodySpec::File { path } => Ok((StarBody::load(path)?, false)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BodyFailure {
    pub body_id: String,
    pub seed: Option<u64>,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CheckSummary {
    pub count: usize,
    pub violations: usize,
    pub min_relative: f64,
    /// Largest `|relative deficit|` among balls.
    pub max_equality_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub bodies: usize,
    pub reports: usize,
    pub violations: usize,
    pub fragile: usize,
    pub equality_failures: usize,
    pub body_failures: usize,
    pub by_check: BTreeMap<String, CheckSummary>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SuiteReport {
    pub summary: SuiteSummary,
    pub reports: Vec<DeficitReport>,
    pub failures: Vec<BodyFailure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.summary.violations == 0 && self.summary.equality_failures == 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "body_id",
            "seed",
            "name",
            "n",
            "k",
            "l",
            "lhs",
            "rhs",
            "deficit",
            "relative",
            "allowance",
            "equality_expected",
            "violation",
            "fragile",
        ])
        .map_err(csv_error)?;
        let opt = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.reports {
            w.write_record([
                r.body_id.clone(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                r.name.clone(),
                r.n.to_string(),
                opt(r.k),
                opt(r.l),
                r.lhs.to_string(),
                r.rhs.to_string(),
                r.deficit.to_string(),
                r.relative.to_string(),
                r.allowance.to_string(),
                r.equality_expected.to_string(),
                r.violation.to_string(),
                r.fragile.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Marks violations and assembles the summary.
pub fn finalize(mut reports: Vec<DeficitReport>, failures: Vec<BodyFailure>, bodies: usize, config: &CorpusConfig) -> SuiteReport {
    let mut summary = SuiteSummary { bodies, body_failures: failures.len(), ..Default::default() };
    for r in &mut reports {
        let bad = !(r.relative >= -(config.tolerance + r.allowance));
        if bad && config.stress {
            r.fragile = true;
        } else {
            r.violation = bad;
        }
        let entry = summary.by_check.entry(r.name.clone()).or_insert(CheckSummary {
            min_relative: f64::INFINITY,
            ..Default::default()
        });
        entry.count += 1;
        entry.min_relative = entry.min_relative.min(r.relative);
        if r.violation {
            entry.violations += 1;
            summary.violations += 1;
        }
        if r.fragile {
            summary.fragile += 1;
        }
        if r.equality_expected {
            entry.max_equality_error = entry.max_equality_error.max(r.relative.abs());
            if !(r.relative.abs() <= config.equality_tolerance) {
                summary.equality_failures += 1;
            }
        }
    }
    summary.reports = reports.len();
    SuiteReport { summary, reports, failures }
}

/// Generates the corpus and runs the checks in parallel on the current
/// rayon pool. Output order follows [`corpus_entries`]; errors on one body
/// are recorded and do not stop the suite.
pub fn run_suite(config: &CorpusConfig) -> Result<SuiteReport> {
    config.validate()?;
    let entries = corpus_entries(config);
    let results: Vec<std::result::Result<Vec<DeficitReport>, BodyFailure>> = entries
        .par_iter()
        .map(|e| {
            let fail = |msg: String| BodyFailure { body_id: e.id.clone(), seed: e.seed, error: msg };
            let (body, is_ball) = build_body(e, config).map_err(|err| fail(err.to_string()))?;
            let margin = body.h_convexity_margin().map_err(|err| fail(err.to_string()))?;
            if margin < 0.0 {
                return Err(fail(format!("not h-convex (margin {margin:e}); skipped")));
            }
            let eb = EvaluatedBody::new(e.id.clone(), e.seed, is_ball, body).map_err(|err| fail(err.to_string()))?;
            eb.check_all(&config.checks).map_err(|err| fail(err.to_string()))
        })
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(mut v) => reports.append(&mut v),
            Err(f) => failures.push(f),
        }
    }
    Ok(finalize(reports, failures, entries.len(), config))
}

/// `W_k − f_k(f_l^{-1}(W_l))` along a flow trace.
pub fn trace_quermass_deficits(trace: &FlowTrace) -> Result<Vec<f64>> {
    let t = BallFunctionTable::shared(trace.dimension)?;
    trace
        .records
        .iter()
        .map(|r| Ok(r.w[trace.k] - t.f(trace.k, t.f_inverse(trace.l, r.w[trace.l])?)?))
        .collect()
}

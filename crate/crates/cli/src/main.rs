//! `hyperflow`: flow runs, inequality suites, ball tables and corpus export.
//!
//! Exit codes: 0 success / converged, 1 invalid input, 2 flow hit `t_max`,
//! 3 flow stalled or aborted by a monitor, 4 inequality violations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hyperflow_core::ballfuncs::BallFunctionTable;
use hyperflow_core::flow::{self, FlowConfig, FlowStatus};
use hyperflow_core::special::sphere_measure;
use hyperflow_core::verify::{self, CorpusConfig};
use hyperflow_core::{make_ball, make_offcenter_ball, make_perturbed_ball, StarBody};

const EXIT_INVALID: u8 = 1;
const EXIT_TIME_LIMIT: u8 = 2;
const EXIT_STALLED: u8 = 3;
const EXIT_VIOLATIONS: u8 = 4;

#[derive(Parser)]
#[command(name = "hyperflow", version, about = "Curvature flows and inequality checks in hyperbolic space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the angular resolution in the configuration.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the curvature flow from a body described in the config.
    Flow(Common),
    /// Run the inequality suite over a generated corpus.
    Verify(Common),
    /// Tabulate ball quermassintegrals and curvature integrals.
    BallTables {
        #[command(flatten)]
        common: Common,
        /// Ambient dimension.
        #[arg(long)]
        dimension: usize,
        /// Explicit comma-separated radii.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with_all = ["r_max", "points"])]
        radii: Option<Vec<f64>>,
        /// Uniform grid on [0, r_max].
        #[arg(long, default_value_t = 5.0)]
        r_max: f64,
        #[arg(long, default_value_t = 51)]
        points: usize,
    },
    /// Write the bodies of a corpus as JSON files.
    Corpus(Common),
}

/// Body description in a flow configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum BodyConfig {
    Ball {
        n: usize,
        radius: f64,
        resolution: usize,
    },
    OffcenterBall {
        n: usize,
        radius: f64,
        offset: f64,
        resolution: usize,
    },
    Perturbed {
        n: usize,
        radius: f64,
        /// Mode number (as a JSON key) to relative amplitude.
        amplitudes: BTreeMap<String, f64>,
        resolution: usize,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl BodyConfig {
    fn apply_overrides(&mut self, seed: Option<u64>, res: Option<usize>) {
        match self {
            BodyConfig::Ball { resolution, .. } | BodyConfig::OffcenterBall { resolution, .. } => {
                if let Some(r) = res {
                    *resolution = r;
                }
            }
            BodyConfig::Perturbed { resolution, seed: s, .. } => {
                if let Some(r) = res {
                    *resolution = r;
                }
                if let Some(x) = seed {
                    *s = x;
                }
            }
            BodyConfig::File { .. } => {}
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            BodyConfig::Perturbed { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    fn build(&self, base: &Path) -> hyperflow_core::Result<StarBody> {
        match self {
            BodyConfig::Ball { n, radius, resolution } => make_ball(*n, *radius, *resolution),
            BodyConfig::OffcenterBall { n, radius, offset, resolution } => {
                make_offcenter_ball(*n, *radius, *offset, *resolution)
            }
            BodyConfig::Perturbed { n, radius, amplitudes, resolution, seed } => {
                let mut modes = BTreeMap::new();
                for (key, &a) in amplitudes {
                    let m: usize = key.trim().parse().map_err(|_| {
                        hyperflow_core::Error::Argument(format!("amplitude key {key:?} is not a mode number"))
                    })?;
                    modes.insert(m, a);
                }
                make_perturbed_ball(*n, *radius, &modes, *resolution, *seed)
            }
            BodyConfig::File { path } => StarBody::load(&base.join(path)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowFile {
    body: BodyConfig,
    #[serde(default)]
    flow: FlowConfig,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: serde_json::Value,
    seed: Option<u64>,
    version: &'a str,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<serde_json::Value>,
}

struct Failure(u8, String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_INVALID, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(EXIT_INVALID, msg.into())
}

fn read_config(common: &Common) -> Result<(String, PathBuf), Failure> {
    let path = common.config.as_ref().ok_or_else(|| invalid("--config <path> is required"))?;
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((text, base))
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| invalid(format!("invalid {what} configuration: {e}")))
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<(), Failure> {
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

fn say(common: &Common, msg: impl AsRef<str>) {
    if !common.quiet {
        println!("{}", msg.as_ref());
    }
}

fn cmd_flow(common: &Common) -> Result<u8, Failure> {
    let (text, base) = read_config(common)?;
    let mut file: FlowFile = parse(&text, "flow")?;
    file.body.apply_overrides(common.seed, common.resolution);
    let body = file.body.build(&base).map_err(|e| invalid(format!("body: {e}")))?;
    file.flow.validate(body.dimension()).map_err(|e| invalid(format!("flow: {e}")))?;
    let run = flow::run(&body, &file.flow).map_err(|e| invalid(format!("flow: {e}")))?;

    fs::create_dir_all(&common.out)?;
    let mut csv = Vec::new();
    run.trace.write_csv(&mut csv)?;
    fs::write(common.out.join("trace.csv"), csv)?;
    fs::write(common.out.join("final_body.json"), run.final_body.to_json()? + "\n")?;
    let result = serde_json::json!({
        "status": run.status,
        "accepted_steps": run.accepted_steps,
        "rejected_steps": run.rejected_steps,
        "final_time": run.trace.records.last().map(|r| r.t),
        "limit_radius": run.limit_radius,
        "final_mean_radius": run.final_mean_radius,
        "final_max_c_minus_f": run.final_max_c_minus_f,
        "fragile": run.fragile,
        "pinching_rate": run.trace.fit_pinching_rate(0.5),
    });
    write_manifest(
        &common.out,
        &RunManifest {
            command: "flow",
            config: serde_json::to_value(&file)?,
            seed: file.body.seed(),
            version: env!("CARGO_PKG_VERSION"),
            outputs: vec!["trace.csv".into(), "final_body.json".into()],
            result: Some(result),
        },
    )?;
    say(
        common,
        format!(
            "{:?} after {} steps, t = {:.6}, radius {:.12} (limit {:.12})",
            run.status,
            run.accepted_steps,
            run.trace.records.last().map_or(0.0, |r| r.t),
            run.final_mean_radius,
            run.limit_radius
        ),
    );
    Ok(match run.status {
        FlowStatus::Converged => 0,
        FlowStatus::TimeLimit => EXIT_TIME_LIMIT,
        FlowStatus::Stalled(_) | FlowStatus::MonitorViolation(_) => EXIT_STALLED,
    })
}

fn corpus_config(common: &Common) -> Result<CorpusConfig, Failure> {
    let mut cfg: CorpusConfig = match &common.config {
        Some(_) => {
            let (text, base) = read_config(common)?;
            let mut cfg: CorpusConfig = parse(&text, "suite")?;
            for p in &mut cfg.extra_bodies {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            cfg
        }
        None => CorpusConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = common.resolution {
        cfg.resolution = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_verify(common: &Common) -> Result<u8, Failure> {
    let cfg = corpus_config(common)?;
    let report = verify::run_suite(&cfg)?;
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("report.json"), report.to_json()? + "\n")?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(common.out.join("report.csv"), csv)?;
    write_manifest(
        &common.out,
        &RunManifest {
            command: "verify",
            config: serde_json::to_value(&cfg)?,
            seed: Some(cfg.seed),
            version: env!("CARGO_PKG_VERSION"),
            outputs: vec!["report.json".into(), "report.csv".into()],
            result: Some(serde_json::to_value(&report.summary)?),
        },
    )?;
    let s = &report.summary;
    say(
        common,
        format!(
            "{} bodies, {} checks, {} violations, {} equality failures, {} skipped bodies",
            s.bodies, s.reports, s.violations, s.equality_failures, s.body_failures
        ),
    );
    for f in &report.failures {
        say(common, format!("  skipped {}: {}", f.body_id, f.error));
    }
    Ok(if report.passed() { 0 } else { EXIT_VIOLATIONS })
}

fn cmd_ball_tables(common: &Common, n: usize, radii: Option<Vec<f64>>, r_max: f64, points: usize) -> Result<u8, Failure> {
    if n < 2 {
        return Err(invalid("dimension must be >= 2"));
    }
    let radii = match radii {
        Some(r) => r,
        None => {
            if !(r_max > 0.0) || points < 2 {
                return Err(invalid("need r_max > 0 and at least 2 points"));
            }
            (0..points).map(|i| r_max * i as f64 / (points - 1) as f64).collect()
        }
    };
    let table = BallFunctionTable::shared(n)?;
    if radii.is_empty() || radii.iter().any(|r| !(*r >= 0.0 && *r <= table.r_max())) {
        return Err(invalid(format!("radii must lie in [0, {}]", table.r_max())));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("radii must be strictly increasing"));
    }
    let mut header = vec!["r".to_string()];
    header.extend((0..n).map(|k| format!("f_{k}")));
    header.push(format!("W_{n}"));
    header.extend((0..n).rev().map(|j| format!("V_{j}")));
    let mut out = header.join(",") + "\n";
    for &r in &radii {
        let mut row = vec![r.to_string()];
        for k in 0..n {
            row.push(table.f(k, r)?.to_string());
        }
        row.push((sphere_measure(n - 1) / n as f64).to_string());
        // V_j = ∫ H_{n−1−j}, listed from V_{n−1} = area down to V_0
        row.extend((0..n).map(|k| table.ball_curvature_integral(k, r).to_string()));
        out += &(row.join(",") + "\n");
    }
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("ball_tables.csv"), out)?;
    write_manifest(
        &common.out,
        &RunManifest {
            command: "ball-tables",
            config: serde_json::json!({ "dimension": n, "radii": radii }),
            seed: None,
            version: env!("CARGO_PKG_VERSION"),
            outputs: vec!["ball_tables.csv".into()],
            result: None,
        },
    )?;
    say(common, format!("{} rows written", radii.len()));
    Ok(0)
}

fn cmd_corpus(common: &Common) -> Result<u8, Failure> {
    let cfg = corpus_config(common)?;
    let entries = verify::corpus_entries(&cfg);
    let dir = common.out.join("bodies");
    fs::create_dir_all(&dir)?;
    let mut index = Vec::new();
    let mut outputs = Vec::new();
    for e in &entries {
        let name = format!("{}.json", e.id.replace(['/', ':', '\\'], "_"));
        let entry = match verify::build_body(e, &cfg) {
            Ok((body, _)) => {
                fs::write(dir.join(&name), body.to_json()? + "\n")?;
                outputs.push(format!("bodies/{name}"));
                serde_json::json!({ "entry": e, "file": format!("bodies/{name}") })
            }
            Err(err) => serde_json::json!({ "entry": e, "error": err.to_string() }),
        };
        index.push(entry);
    }
    fs::write(common.out.join("corpus.json"), serde_json::to_string_pretty(&index)? + "\n")?;
    outputs.insert(0, "corpus.json".into());
    write_manifest(
        &common.out,
        &RunManifest {
            command: "corpus",
            config: serde_json::to_value(&cfg)?,
            seed: Some(cfg.seed),
            version: env!("CARGO_PKG_VERSION"),
            outputs,
            result: None,
        },
    )?;
    say(common, format!("{} bodies written to {}", entries.len(), dir.display()));
    Ok(0)
}

fn thread_pool() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("HYPERFLOW_THREADS") {
        let n: usize = v.parse().map_err(|_| invalid(format!("HYPERFLOW_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(invalid("HYPERFLOW_THREADS must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { 0 });
        }
    };
    let result = thread_pool().and_then(|_| match &cli.command {
        Command::Flow(c) => cmd_flow(c),
        Command::Verify(c) => cmd_verify(c),
        Command::BallTables { common, dimension, radii, r_max, points } => {
            cmd_ball_tables(common, *dimension, radii.clone(), *r_max, *points)
        }
        Command::Corpus(c) => cmd_corpus(c),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

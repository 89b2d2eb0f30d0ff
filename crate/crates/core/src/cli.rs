//! Command-line front end: argument parsing, subcommands, bundled examples.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::coeff::CoeffError;
use crate::condition::{check_condition, ConditionError};
use crate::config::{Config, ConfigError};
use crate::curvature::{check_w32, classify_sign, CurvatureError};
use crate::domain::RegionError;
use crate::rays::{fan, FanSummary, RayError};
use crate::report::{
    to_json, ConstructAttempt, ConstructReport, CurvatureRun, ExampleRun, ExampleStep, ExamplesReport, Outcome,
    RaysRun, RunReport, TOOL, VERSION,
};
use crate::weight::{
    compute_c, detect_index, find_lambda, partial_ranges, Admissible, SearchOptions, SignCase, WeightError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CERTIFIED: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    fn config(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

fn region_code(e: &RegionError) -> i32 {
    match e {
        RegionError::Eval { .. } => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn coeff_code(e: &CoeffError) -> i32 {
    match e {
        CoeffError::Eval { .. } => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn condition_code(e: &ConditionError) -> i32 {
    match e {
        ConditionError::Coeff(c) => coeff_code(c),
        ConditionError::Region(r) => region_code(r),
        ConditionError::Dimension { .. } | ConditionError::NotDiagonal => EXIT_CONFIG,
        ConditionError::Weight { .. } | ConditionError::Cholesky { .. } | ConditionError::NonFinite { .. } => {
            EXIT_NUMERIC
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<RegionError> for CliError {
    fn from(e: RegionError) -> Self {
        CliError {
            code: region_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<ConditionError> for CliError {
    fn from(e: ConditionError) -> Self {
        CliError {
            code: condition_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<WeightError> for CliError {
    fn from(e: WeightError) -> Self {
        let code = match &e {
            WeightError::Coeff(c) => coeff_code(c),
            WeightError::Region(r) => region_code(r),
            WeightError::Condition(c) => condition_code(c),
            WeightError::Overflow { .. } => EXIT_NUMERIC,
            WeightError::LambdaMaxExceeded { .. } => EXIT_NOT_CERTIFIED,
            WeightError::NotDiagonal | WeightError::Axis { .. } | WeightError::Lambda(_) => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<CurvatureError> for CliError {
    fn from(e: CurvatureError) -> Self {
        let code = match &e {
            CurvatureError::Eval { .. } => EXIT_NUMERIC,
            CurvatureError::Region(r) => region_code(r),
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<RayError> for CliError {
    fn from(e: RayError) -> Self {
        let code = match &e {
            RayError::Coeff(c) => coeff_code(c),
            RayError::Region(r) => region_code(r),
            RayError::StepCollapse { .. } | RayError::Exit(_) => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        message: format!("cannot write {}: {e}", path.display()),
    }
}

fn finish(
    command: &str,
    config: &Config,
    verdict: String,
    exit_code: i32,
    outcome: Outcome,
    start: Instant,
) -> RunReport {
    RunReport {
        tool: TOOL,
        version: VERSION,
        command: command.to_string(),
        config: config.clone(),
        verdict,
        exit_code,
        outcome,
        duration_seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn cmd_verify(config: &Config) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let problem = config.build()?;
    let weight = problem
        .weight
        .as_ref()
        .ok_or_else(|| CliError::config("verify needs problem.weight"))?;
    let report = check_condition(&problem.field, weight, &problem.region, config.options.resolution)?;
    let code = if report.certified() {
        EXIT_OK
    } else {
        EXIT_NOT_CERTIFIED
    };
    let verdict = report.verdict.as_str().to_string();
    Ok(finish("verify", config, verdict, code, Outcome::Verify(report), start))
}

fn forced_choice(
    config: &Config,
    admissible: &[Admissible],
    ranges: &[crate::weight::PartialRange],
) -> Option<Admissible> {
    let j = config.options.force_j? - 1;
    let found = admissible.iter().find(|a| a.j == j);
    let sign_case = config
        .options
        .force_case
        .or(found.map(|a| a.sign_case))
        .unwrap_or(SignCase::Negative);
    if let Some(a) = found.filter(|a| a.sign_case == sign_case) {
        return Some(a.clone());
    }
    // Signed margin: negative when the forced sign does not hold.
    let column = ranges.iter().filter(|r| r.k == j);
    let sign_margin = match sign_case {
        SignCase::Negative => -column.map(|r| r.range.max).fold(f64::NEG_INFINITY, f64::max),
        SignCase::Positive => column.map(|r| r.range.min).fold(f64::INFINITY, f64::min),
    };
    let sign_margin = if sign_margin.is_finite() {
        sign_margin
    } else {
        f64::INFINITY
    };
    Some(Admissible {
        j,
        sign_case,
        sign_margin,
    })
}

pub fn cmd_construct(config: &Config) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let problem = config.build()?;
    let field = &problem.field;
    if !field.is_diagonal() {
        return Err(CliError::config(
            "construct needs diagonal coefficients (problem.A.diagonal = true)",
        ));
    }
    let resolution = config.options.resolution;
    let grid = problem.region.sample(resolution)?;
    let ranges = if field.dim() > 1 {
        partial_ranges(field, &grid)?
    } else {
        Vec::new()
    };
    let admissible = detect_index(field, &grid)?;
    let mut report = ConstructReport {
        admissible: admissible.clone(),
        partial_ranges: ranges.clone(),
        chosen: None,
        c: None,
        certificate: None,
        reverification: None,
        attempts: Vec::new(),
        failed_steps: Vec::new(),
        best_failing_report: None,
        message: None,
    };
    let chosen = forced_choice(config, &admissible, &ranges).or_else(|| {
        admissible
            .iter()
            .fold(None::<&Admissible>, |best, a| match best {
                Some(b) if !(a.sign_margin > b.sign_margin) => Some(b),
                _ => Some(a),
            })
            .cloned()
    });
    let Some(chosen) = chosen else {
        let mut msg = String::from("no admissible index; off-index partial ranges:");
        for r in &ranges {
            let _ = write!(
                msg,
                " d a{}/d x{} in [{:.6}, {:.6}];",
                r.i + 1,
                r.k + 1,
                r.range.min,
                r.range.max
            );
        }
        report.message = Some(msg.trim_end_matches(';').to_string());
        let outcome = Outcome::Construct(Box::new(report));
        return Ok(finish(
            "construct",
            config,
            "no_admissible_index".into(),
            EXIT_NOT_CERTIFIED,
            outcome,
            start,
        ));
    };
    report.chosen = Some(chosen.clone());
    let options = SearchOptions {
        lambda_max: config.options.lambda_max,
        target_margin: config.options.target_margin,
    };
    let c = compute_c(&grid, chosen.j, chosen.sign_case);
    report.c = Some(c);
    let (verdict, code) = match find_lambda(field, &grid, &chosen, c, options) {
        Ok(cert) => {
            let recheck_resolution = 2 * resolution - 1;
            let again = cert.reverify(field, &problem.region, recheck_resolution)?;
            let ok = again.certified();
            report.attempts.push(ConstructAttempt {
                resolution,
                lambda: cert.lambda,
                mu0: cert.report.mu0,
                recheck_resolution,
                recheck_verdict: again.verdict,
                recheck_mu0: again.mu0,
            });
            report.reverification = Some(again);
            report.certificate = Some(cert);
            if ok {
                ("certified", EXIT_OK)
            } else {
                report.message = Some(format!(
                    "certified at resolution {resolution} but not at {recheck_resolution}"
                ));
                ("reverification_failed", EXIT_NOT_CERTIFIED)
            }
        }
        Err(e @ WeightError::LambdaMaxExceeded { .. }) => {
            report.message = Some(e.to_string());
            if let WeightError::LambdaMaxExceeded { best, steps, .. } = e {
                report.best_failing_report = Some(best.report);
                report.failed_steps = steps;
            }
            ("lambda_max_exceeded", EXIT_NOT_CERTIFIED)
        }
        Err(e @ WeightError::Overflow { .. }) => {
            report.message = Some(e.to_string());
            if let WeightError::Overflow { steps, .. } = e {
                report.best_failing_report = steps
                    .iter()
                    .fold(None::<&crate::weight::LambdaStep>, |best, s| match best {
                        Some(b) if !(s.mu0 > b.mu0) => Some(b),
                        _ => Some(s),
                    })
                    .map(|s| s.report.clone());
                report.failed_steps = steps;
            }
            ("overflow", EXIT_NUMERIC)
        }
        Err(e) => return Err(e.into()),
    };
    let outcome = Outcome::Construct(Box::new(report));
    Ok(finish("construct", config, verdict.into(), code, outcome, start))
}

pub fn cmd_curvature(config: &Config) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let problem = config.build()?;
    let field = &problem.field;
    if field.dim() != 2 || !field.is_diagonal() {
        return Err(CliError::config("curvature needs a diagonal two-dimensional field"));
    }
    let entries = field.entries();
    let curvature = classify_sign(
        &entries[0],
        &entries[1],
        &problem.region,
        config.options.resolution,
        &config.probes(),
    )?;
    let w32 = match (problem.constants.get("mu1"), problem.constants.get("mu2")) {
        (Some(m1), Some(m2)) => Some(check_w32(m1, m2)),
        _ => None,
    };
    let verdict = curvature.classification.as_str().to_string();
    let outcome = Outcome::Curvature(CurvatureRun { w32, curvature });
    Ok(finish("curvature", config, verdict, EXIT_OK, outcome, start))
}

pub fn cmd_rays(config: &Config) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let problem = config.build()?;
    let o = &config.options;
    let center = o
        .center
        .clone()
        .unwrap_or_else(|| problem.region.bounds().iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect());
    let rays = fan(&problem.field, &problem.region, &center, o.count, o.horizon, o.step)?;
    let summary = FanSummary::of(&rays);
    let outcome = Outcome::Rays(RaysRun {
        center,
        horizon: o.horizon,
        step: o.step,
        summary,
        rays,
    });
    Ok(finish("rays", config, "traced".into(), EXIT_OK, outcome, start))
}

/// A bundled configuration and the verdicts it is expected to produce.
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
    pub steps: &'static [(&'static str, &'static str)],
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "disk-trap",
        description: "diag(1+x^2+y^2) on the disk of radius sqrt(2): weight check, construction attempt, ray fan",
        toml: include_str!("../presets/disk-trap.toml"),
        steps: &[
            ("verify", "failed_con2"),
            ("construct", "no_admissible_index"),
            ("rays", "traced"),
        ],
    },
    Preset {
        name: "curvature-signchange",
        description: "exp(mu1 x1), exp(-mu2 x1^2) with mu1 = 0.5, mu2 = 0.1: parameter check and curvature sign",
        toml: include_str!("../presets/curvature-signchange.toml"),
        steps: &[("curvature", "sign_changing")],
    },
    Preset {
        name: "cubic-exp",
        description:
            "diag(exp(x^3+y^3)) on the unit disk centered (2,2): certified at 33, a boundary pocket fails at 65",
        toml: include_str!("../presets/cubic-exp.toml"),
        steps: &[("construct", "reverification_failed")],
    },
    Preset {
        name: "isotropic-exp",
        description: "diag(exp(x+y)) on the unit disk centered (2,0): weight construction",
        toml: include_str!("../presets/isotropic-exp.toml"),
        steps: &[("construct", "certified")],
    },
];

pub fn preset(name: &str) -> Result<&'static Preset, CliError> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        CliError::config(format!(
            "unknown example {name:?}; available: {}, all",
            names.join(", ")
        ))
    })
}

pub fn run_command(command: &str, config: &Config) -> Result<RunReport, CliError> {
    match command {
        "verify" => cmd_verify(config),
        "construct" => cmd_construct(config),
        "curvature" => cmd_curvature(config),
        "rays" => cmd_rays(config),
        other => Err(CliError::config(format!("unknown command {other:?}"))),
    }
}

/// The verdict string compared against a preset's expectation.
fn observed(report: &RunReport) -> String {
    match &report.outcome {
        Outcome::Curvature(CurvatureRun { w32: Some(w), .. }) if !w.holds => {
            format!("{} (parameter check failed)", report.verdict)
        }
        _ => report.verdict.clone(),
    }
}

pub fn run_example(p: &Preset, resolution: Option<usize>) -> Result<ExampleRun, CliError> {
    let mut config = Config::from_toml(p.toml)?;
    if let Some(r) = resolution {
        config.options.resolution = r;
        config.validate()?;
    }
    let mut steps = Vec::new();
    for &(command, expected) in p.steps {
        let report = run_command(command, &config)?;
        let observed = observed(&report);
        steps.push(ExampleStep {
            expected: expected.to_string(),
            matched: observed == expected,
            observed,
            report,
        });
    }
    Ok(ExampleRun {
        name: p.name.to_string(),
        description: p.description.to_string(),
        matched: steps.iter().all(|s| s.matched),
        steps,
    })
}

pub fn cmd_examples(name: &str, resolution: Option<usize>) -> Result<ExamplesReport, CliError> {
    let selected: Vec<&Preset> = if name == "all" {
        PRESETS.iter().collect()
    } else {
        vec![preset(name)?]
    };
    let examples = selected
        .into_iter()
        .map(|p| run_example(p, resolution))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExamplesReport {
        tool: TOOL,
        version: VERSION,
        all_matched: examples.iter().all(|e| e.matched),
        examples,
    })
}

fn g(v: f64) -> String {
    format!("{v:.6e}")
}

fn point(p: &[f64]) -> String {
    let parts: Vec<String> = p.iter().map(|v| format!("{v:.4}")).collect();
    format!("({})", parts.join(", "))
}

/// Short human-readable rendering of a run.
pub fn summarize(report: &RunReport) -> String {
    let mut s = format!("{}: {}\n", report.command, report.verdict);
    match &report.outcome {
        Outcome::Verify(r) => {
            let _ = writeln!(s, "  grid points      {} (resolution {})", r.point_count, r.resolution);
            let _ = writeln!(
                s,
                "  alpha_min        {} at {}",
                g(r.alpha_min),
                point(&r.alpha_min_point)
            );
            let _ = writeln!(s, "  mu0 (2B vs A)    {} at {}", g(r.mu0), point(&r.worst_point_con1));
            let _ = writeln!(
                s,
                "  lambda_min(B)    {} at {}",
                g(r.lambda_min_b),
                point(&r.lambda_min_b_point)
            );
            let _ = writeln!(
                s,
                "  min |grad d|     {} at {}",
                g(r.min_grad_norm),
                point(&r.worst_point_con2)
            );
        }
        Outcome::Construct(c) => {
            for a in &c.admissible {
                let _ = writeln!(
                    s,
                    "  admissible j={} ({}) margin {}",
                    a.j + 1,
                    a.sign_case.as_str(),
                    g(a.sign_margin)
                );
            }
            if let (Some(ch), Some(cv)) = (&c.chosen, c.c) {
                let _ = writeln!(s, "  chosen j={} ({}), c = {}", ch.j + 1, ch.sign_case.as_str(), g(cv));
            }
            if let Some(cert) = &c.certificate {
                let _ = writeln!(s, "  lambda           {}", g(cert.lambda));
                let _ = writeln!(s, "  mu0              {}", g(cert.report.mu0));
                let _ = writeln!(s, "  weight           {}", cert.weight_expression);
            }
            if let Some(r) = &c.reverification {
                let _ = writeln!(
                    s,
                    "  recheck          {} at resolution {}, mu0 {}",
                    r.verdict.as_str(),
                    r.resolution,
                    g(r.mu0)
                );
            }
            if let Some(m) = &c.message {
                let _ = writeln!(s, "  {m}");
            }
        }
        Outcome::Curvature(c) => {
            if let Some(w) = &c.w32 {
                let _ = writeln!(
                    s,
                    "  parameters       mu1={} mu2={}: mu1+2mu2={} (<2 {}), 3mu1+18mu2={} (>2 {}) -> {}",
                    w.mu1, w.mu2, w.upper_sum, w.upper_ok, w.lower_sum, w.lower_ok, w.holds
                );
            }
            let k = &c.curvature;
            let _ = writeln!(s, "  k range          [{}, {}]", g(k.k_min), g(k.k_max));
            if let Some(p) = &k.witness_positive {
                let _ = writeln!(s, "  k > 0 at         {}", point(p));
            }
            if let Some(p) = &k.witness_negative {
                let _ = writeln!(s, "  k < 0 at         {}", point(p));
            }
            for pr in &k.probes {
                let _ = writeln!(
                    s,
                    "  on x{} = {}      [{}, {}] {}",
                    pr.probe.axis + 1,
                    pr.probe.value,
                    g(pr.k_min),
                    g(pr.k_max),
                    pr.classification.as_str()
                );
            }
            let _ = writeln!(
                s,
                "  inverse metric   [{}, {}] {}",
                g(k.inverse_metric.k_min),
                g(k.inverse_metric.k_max),
                k.inverse_metric.classification.as_str()
            );
        }
        Outcome::Rays(r) => {
            let sm = &r.summary;
            let _ = writeln!(s, "  rays             {} from {}", sm.count, point(&r.center));
            let _ = writeln!(s, "  escaped/trapped  {}/{}", sm.escaped, sm.trapped);
            if let (Some(lo), Some(hi)) = (sm.min_escape_time, sm.max_escape_time) {
                let _ = writeln!(s, "  escape times     [{}, {}]", g(lo), g(hi));
            }
            let _ = writeln!(s, "  max drift        {}", g(sm.max_relative_drift));
            let _ = writeln!(s, "  {:>4} {:>24} {:>14}", "ray", "direction", "escape");
            for (i, o) in r.rays.iter().enumerate() {
                let t = o.escape_time.time().map_or("trapped".to_string(), g);
                let _ = writeln!(s, "  {:>4} {:>24} {:>14}", i, point(&o.direction), t);
            }
        }
    }
    s
}

/// Per-point CSV for `--dump-grid`.
pub fn write_dump<W: Write>(report: &RunReport, mut out: W) -> io::Result<()> {
    match &report.outcome {
        Outcome::Verify(r) => r.write_csv(out),
        Outcome::Construct(c) => match &c.certificate {
            Some(cert) => cert.report.write_csv(out),
            None => match &c.best_failing_report {
                Some(r) => r.write_csv(out),
                None => writeln!(out, "x1"),
            },
        },
        Outcome::Curvature(c) => c.curvature.write_csv(out),
        Outcome::Rays(r) => {
            let n = r.center.len();
            let cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
            writeln!(out, "ray,sample,{}", cols.join(","))?;
            for (i, o) in r.rays.iter().enumerate() {
                for (k, p) in o.path.iter().enumerate() {
                    let vals: Vec<String> = p.iter().map(|v| format!("{v:.17e}")).collect();
                    writeln!(out, "{i},{k},{}", vals.join(","))?;
                }
            }
            Ok(())
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "carleman",
    version,
    about = "Certify and construct multiplier weights for variable-coefficient wave equations"
)]
pub struct Cli {
    /// Worker threads for grid sweeps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Problem description in TOML.
    #[arg(long)]
    pub config: PathBuf,
    /// Grid points per axis, overriding the config.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Write per-point data as CSV.
    #[arg(long)]
    pub dump_grid: Option<PathBuf>,
    /// Write the JSON report ("-" for stdout).
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the weight condition for the configured weight.
    Verify(Common),
    /// Construct an exponential weight.
    Construct {
        #[command(flatten)]
        common: Common,
        /// Axis to use (1-based) instead of the best admissible one.
        #[arg(long)]
        force_j: Option<usize>,
        /// Sign case for a forced axis: negative or positive.
        #[arg(long)]
        force_case: Option<SignCase>,
        /// Upper bound for the lambda search.
        #[arg(long)]
        lambda_max: Option<f64>,
        /// Smallest mu0 accepted as certified.
        #[arg(long)]
        target_margin: Option<f64>,
    },
    /// Classify the curvature sign of a 2D diagonal metric.
    Curvature(Common),
    /// Trace a fan of rays.
    Rays {
        #[command(flatten)]
        common: Common,
        /// Comma-separated start point (default: box center).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        center: Option<Vec<f64>>,
        /// Number of rays in the fan.
        #[arg(long)]
        count: Option<usize>,
        /// Time after which a ray counts as trapped.
        #[arg(long)]
        horizon: Option<f64>,
        /// Initial integration step.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Run a bundled example, or all of them.
    Examples {
        #[arg(default_value = "all")]
        name: String,
        /// Grid points per axis, overriding each example's own.
        #[arg(long)]
        resolution: Option<usize>,
        /// Write the JSON report ("-" for stdout).
        #[arg(long)]
        json: Option<PathBuf>,
        /// List the bundled examples and exit.
        #[arg(long)]
        list: bool,
    },
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    if path.as_os_str() == "-" {
        print!("{text}");
        return Ok(());
    }
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn load(common: &Common) -> Result<Config, CliError> {
    let mut config = Config::load(&common.config)?;
    if let Some(r) = common.resolution {
        config.options.resolution = r;
    }
    Ok(config)
}

fn single(command: &str, common: &Common, config: Config) -> Result<i32, CliError> {
    config.validate()?;
    let report = run_command(command, &config)?;
    let to_stdout = common.json.as_deref().is_some_and(|p| p.as_os_str() == "-");
    if !to_stdout {
        print!("{}", summarize(&report));
    }
    if let Some(path) = &common.dump_grid {
        let f = File::create(path).map_err(|e| io_error(path, e))?;
        write_dump(&report, BufWriter::new(f)).map_err(|e| io_error(path, e))?;
    }
    if let Some(path) = &common.json {
        write_output(path, &to_json(&report))?;
    }
    Ok(report.exit_code)
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Verify(common) => single("verify", &common, load(&common)?),
        Command::Curvature(common) => single("curvature", &common, load(&common)?),
        Command::Construct {
            common,
            force_j,
            force_case,
            lambda_max,
            target_margin,
        } => {
            let mut config = load(&common)?;
            let o = &mut config.options;
            o.force_j = force_j.or(o.force_j);
            o.force_case = force_case.or(o.force_case);
            o.lambda_max = lambda_max.unwrap_or(o.lambda_max);
            o.target_margin = target_margin.unwrap_or(o.target_margin);
            single("construct", &common, config)
        }
        Command::Rays {
            common,
            center,
            count,
            horizon,
            step,
        } => {
            let mut config = load(&common)?;
            let o = &mut config.options;
            o.center = center.or(o.center.take());
            o.count = count.unwrap_or(o.count);
            o.horizon = horizon.unwrap_or(o.horizon);
            o.step = step.unwrap_or(o.step);
            single("rays", &common, config)
        }
        Command::Examples {
            name,
            resolution,
            json,
            list,
        } => {
            if list {
                for p in PRESETS {
                    println!("{:<22} {}", p.name, p.description);
                }
                return Ok(EXIT_OK);
            }
            let report = cmd_examples(&name, resolution)?;
            let to_stdout = json.as_deref().is_some_and(|p| p.as_os_str() == "-");
            if !to_stdout {
                for ex in &report.examples {
                    println!(
                        "== {} [{}]",
                        ex.name,
                        if ex.matched { "as expected" } else { "UNEXPECTED" }
                    );
                    for step in &ex.steps {
                        print!("{}", summarize(&step.report));
                        if !step.matched {
                            println!("  expected {}, observed {}", step.expected, step.observed);
                        }
                    }
                }
            }
            if let Some(path) = &json {
                write_output(path, &to_json(&report))?;
            }
            Ok(if report.all_matched {
                EXIT_OK
            } else {
                EXIT_NOT_CERTIFIED
            })
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_CONFIG;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_CONFIG;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

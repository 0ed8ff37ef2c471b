//! `convexlab` command-line front end.
//!
//! Every subcommand prints one JSON run report (schema "1") to stdout or to
//! `--report`. Exit codes: 0 accept or success, 1 reject, 2 bad
//! configuration, 3 resource cap or solver failure.

use std::fs;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use convexlab::catalog::parse_function;
use convexlab::coeff_learn::{mean_sample_count, LearnBudget};
use convexlab::convex_regress::oracle_dconv;
use convexlab::envelope::{
    cece_with, one_sided_test_with, AnchorSet, CeceOptions, OneSidedConfig, SolverStatus,
};
use convexlab::learn_test::{
    learn_with_report, statistic_sample_count, tolerant_test_with, LearnerConfig, LearnerProfile,
    TolerantConfig,
};
use convexlab::oracle::read_csv_rows;
use convexlab::spectrum::{dconv_lower_bound, degree2_check, SpectrumVerdict};
use convexlab::{Error, FunctionOracle, RngStream, TestVerdict, Verdict};

const SCHEMA: &str = "1";

#[derive(Parser)]
#[command(
    name = "convexlab",
    version,
    about = "Learn and test convexity over Gaussian space"
)]
struct Cli {
    /// Write the run report to this file instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Serialize)]
struct FunctionArgs {
    /// Catalog entry, e.g. `abs_proj:1`, `neg_h2:0.3` or `noised:0.5:relu_proj:1`.
    #[arg(long)]
    function: String,
    /// Dimension for entries that take no direction.
    #[arg(long, allow_negative_numbers = true)]
    dim: Option<usize>,
    #[arg(
        long,
        env = "CONVEXLAB_SEED",
        default_value_t = 0,
        allow_negative_numbers = true
    )]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Profile {
    Desk,
    Theory,
}

#[derive(Subcommand)]
enum Command {
    /// Run the proper agnostic learner.
    Learn(LearnArgs),
    /// Tolerant two-sided convexity test.
    TestTolerant(TolerantArgs),
    /// One-sided convexity test via the empirical convex envelope.
    TestOneSided(OneSidedArgs),
    /// Evaluate the convex envelope of a CSV anchor set at CSV query points.
    Envelope(EnvelopeArgs),
    /// Degree-2 Hermite diagnostics.
    Spectrum(SpectrumArgs),
    /// Brute-force distance to the convex class (n <= 2).
    OracleDconv(DconvArgs),
}

#[derive(Args, Serialize)]
struct LearnArgs {
    #[command(flatten)]
    #[serde(flatten)]
    f: FunctionArgs,
    /// Lipschitz bound of the input.
    #[arg(long = "L", allow_negative_numbers = true)]
    lipschitz: f64,
    /// Target accuracy.
    #[arg(long, allow_negative_numbers = true)]
    eps: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// Degree ceiling of the desk profile.
    #[arg(long, default_value_t = 2, allow_negative_numbers = true)]
    max_degree: usize,
    /// Abort with a resource error above this many oracle queries.
    #[arg(long, allow_negative_numbers = true)]
    max_samples_cap: Option<f64>,
    /// Abort with a resource error above this many grid points.
    #[arg(long, allow_negative_numbers = true)]
    grid_cap: Option<usize>,
    /// Write the hypothesis JSON here.
    #[arg(long, allow_negative_numbers = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TolerantArgs {
    #[command(flatten)]
    #[serde(flatten)]
    f: FunctionArgs,
    /// Lipschitz bound of the input.
    #[arg(long = "L", allow_negative_numbers = true)]
    lipschitz: f64,
    /// Target accuracy.
    #[arg(long, allow_negative_numbers = true)]
    eps: f64,
    /// Accept when within this distance of convex.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    eps0: f64,
    #[arg(long, default_value_t = 5, allow_negative_numbers = true)]
    repetitions: usize,
    /// Abort with a resource error above this many oracle queries.
    #[arg(long, allow_negative_numbers = true)]
    max_samples_cap: Option<f64>,
}

#[derive(Args, Serialize)]
struct OneSidedArgs {
    #[command(flatten)]
    #[serde(flatten)]
    f: FunctionArgs,
    /// Lipschitz bound of the input.
    #[arg(long = "L", allow_negative_numbers = true)]
    lipschitz: f64,
    /// Target accuracy.
    #[arg(long, allow_negative_numbers = true)]
    eps: f64,
    /// Draw `(c L sqrt(n) / eps)^n` anchors instead of the union-bound count.
    #[arg(long, allow_negative_numbers = true)]
    c_constant: Option<f64>,
    /// Abort with a resource error above this many oracle queries.
    #[arg(long, allow_negative_numbers = true)]
    max_samples_cap: Option<f64>,
}

#[derive(Args, Serialize)]
struct EnvelopeArgs {
    /// CSV rows `x_1,...,x_n,f`.
    #[arg(long)]
    anchors: PathBuf,
    /// CSV rows `x_1,...,x_n`.
    #[arg(long)]
    queries: PathBuf,
    /// Lipschitz bound of the input.
    #[arg(long = "L", allow_negative_numbers = true)]
    lipschitz: f64,
    /// Write `x_1,...,x_n,value` rows here.
    #[arg(long, allow_negative_numbers = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    f: FunctionArgs,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    xi: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    delta: f64,
}

#[derive(Args, Serialize)]
struct DconvArgs {
    #[command(flatten)]
    #[serde(flatten)]
    f: FunctionArgs,
    /// Lipschitz bound of the input.
    #[arg(long = "L", allow_negative_numbers = true)]
    lipschitz: f64,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    eps_oracle: f64,
}

/// What a subcommand produced.
struct Outcome {
    verdict: Option<Verdict>,
    result: Value,
    samples_used: u64,
    sample_budget: Option<f64>,
    timings: Option<Value>,
    /// Solver trouble that still left a usable result.
    solver_failure: Option<String>,
}

impl Outcome {
    fn new(result: Value) -> Self {
        Outcome {
            verdict: None,
            result,
            samples_used: 0,
            sample_budget: None,
            timings: None,
            solver_failure: None,
        }
    }

    fn from_test(v: &TestVerdict, f: &FunctionOracle) -> Result<Self, Error> {
        Ok(Outcome {
            verdict: Some(v.verdict),
            result: serde_json::to_value(v)?,
            samples_used: f.draws(),
            sample_budget: None,
            timings: None,
            solver_failure: None,
        })
    }
}

fn oracle(args: &FunctionArgs) -> Result<FunctionOracle, Error> {
    parse_function(&args.function, args.dim)
}

/// Draws a learner run makes; the estimators size their batches by the
/// oracle's declared bound.
fn learner_budget(cfg: &LearnerConfig, f: &FunctionOracle) -> Result<f64, Error> {
    let l = f.lipschitz_bound();
    let mean = mean_sample_count(l, cfg.mean_target())? as f64;
    if cfg.trivial() {
        return Ok(mean);
    }
    Ok(mean + cfg.plan(f.dimension())?.sample_count(l)?)
}

fn learner_config(a: &LearnArgs) -> Result<LearnerConfig, Error> {
    let profile = match a.profile {
        Profile::Desk => LearnerProfile::Desk,
        Profile::Theory => LearnerProfile::Theory,
    };
    let mut cfg = LearnerConfig::with_profile(a.lipschitz, a.eps, a.delta, profile)?;
    cfg.max_degree = a.max_degree;
    if let Some(cap) = a.max_samples_cap {
        cfg.sample_cap = cap;
    }
    if let Some(cap) = a.grid_cap {
        cfg.grid_cap = cap;
    }
    Ok(cfg)
}

fn run_learn(a: &LearnArgs) -> Result<Outcome, Error> {
    let cfg = learner_config(a)?;
    let f = oracle(&a.f)?;
    let budget = learner_budget(&cfg, &f)?;
    let report = learn_with_report(&f, &cfg, &RngStream::new(a.f.seed))?;
    if let Some(path) = &a.out {
        fs::write(path, serde_json::to_string_pretty(&report.hypothesis)?)?;
    }
    let timings = serde_json::to_value(&report.stage_seconds)?;
    let failure = report.error.clone();
    let mut result = serde_json::to_value(&report)?;
    if let Value::Object(m) = &mut result {
        m.remove("stage_seconds");
        if let Some(path) = &a.out {
            m.insert("artifact".into(), Value::from(path.display().to_string()));
        }
    }
    Ok(Outcome {
        verdict: None,
        result,
        samples_used: f.draws(),
        sample_budget: Some(budget),
        timings: Some(timings),
        solver_failure: failure,
    })
}

fn run_tolerant(a: &TolerantArgs) -> Result<Outcome, Error> {
    let mut cfg = TolerantConfig::new(a.lipschitz, a.eps, a.eps0)?;
    cfg.repetitions = a.repetitions;
    if let Some(cap) = a.max_samples_cap {
        cfg.learner.sample_cap = cap;
    }
    let f = oracle(&a.f)?;
    let learner = cfg.learner.at_eps(a.eps / 4.0)?;
    let per_run =
        learner_budget(&learner, &f)? + statistic_sample_count(a.lipschitz, a.eps)? as f64;
    let v = tolerant_test_with(&f, &cfg, &RngStream::new(a.f.seed))?;
    let mut out = Outcome::from_test(&v, &f)?;
    out.sample_budget = Some(if a.eps > a.lipschitz {
        0.0
    } else {
        per_run * a.repetitions as f64
    });
    Ok(out)
}

fn run_one_sided(a: &OneSidedArgs) -> Result<Outcome, Error> {
    let mut cfg = OneSidedConfig::new(a.lipschitz, a.eps)?;
    cfg.c_constant = a.c_constant;
    if let Some(cap) = a.max_samples_cap {
        cfg.max_samples = cap;
    }
    let f = oracle(&a.f)?;
    let budget = cfg.anchor_count(f.dimension())? + cfg.query_count();
    let v = one_sided_test_with(&f, &cfg, &RngStream::new(a.f.seed))?;
    let mut out = Outcome::from_test(&v, &f)?;
    out.sample_budget = Some(budget as f64);
    Ok(out)
}

fn read_rows(path: &PathBuf) -> Result<Vec<Vec<f64>>, Error> {
    read_csv_rows(BufReader::new(fs::File::open(path)?))
}

fn run_envelope(a: &EnvelopeArgs) -> Result<Outcome, Error> {
    let rows = read_rows(&a.anchors)?;
    let width = rows.first().map_or(0, Vec::len);
    if width < 2 {
        return Err(Error::Parse(
            "anchor rows need at least one coordinate and a value".into(),
        ));
    }
    let n = width - 1;
    let mut coords = Vec::with_capacity(rows.len() * n);
    let mut values = Vec::with_capacity(rows.len());
    for row in &rows {
        coords.extend_from_slice(&row[..n]);
        values.push(row[n]);
    }
    let anchors = AnchorSet::from_flat(n, coords, values, a.lipschitz)?;
    let queries = read_rows(&a.queries)?;
    let opts = CeceOptions::default();
    let mut answers = Vec::with_capacity(queries.len());
    let mut failures = 0;
    for x in &queries {
        let mut q = cece_with(&anchors, x, &opts)?;
        if q.status == SolverStatus::NumericalFailure {
            q = cece_with(&anchors, x, &opts.tightened())?;
        }
        if q.status == SolverStatus::NumericalFailure {
            failures += 1;
        }
        answers.push(q);
    }
    if let Some(path) = &a.out {
        let mut text = String::new();
        for q in &answers {
            let cells: Vec<String> =
                q.x.iter()
                    .chain([&q.value])
                    .map(|v| format!("{v:e}"))
                    .collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        fs::write(path, text)?;
    }
    let mut out = Outcome::new(json!({ "queries": answers, "numerical_failures": failures }));
    if failures > 0 {
        out.solver_failure = Some(format!("envelope solver failed at {failures} queries"));
    }
    Ok(out)
}

fn run_spectrum(a: &SpectrumArgs) -> Result<Outcome, Error> {
    let f = oracle(&a.f)?;
    let n = f.dimension();
    let coeff = LearnBudget::for_coefficient(f.lipschitz_bound(), 2, a.xi, a.delta)?.total();
    let budget = mean_sample_count(f.lipschitz_bound(), a.xi)? as f64 + n as f64 * coeff;
    let report = degree2_check(&f, a.xi, a.delta, &RngStream::new(a.f.seed))?;
    let verdict = match report.verdict {
        SpectrumVerdict::Consistent => Verdict::Accept,
        SpectrumVerdict::NonConvexCertificate => Verdict::Reject,
    };
    let result = json!({
        "coeffs": report.degree2_coeffs,
        "lower_bound": dconv_lower_bound(&report),
        "verdict": report.verdict,
        "tolerance": report.tolerance,
        "negative_part_norm": report.negative_part_norm,
    });
    Ok(Outcome {
        verdict: Some(verdict),
        result,
        samples_used: f.draws(),
        sample_budget: Some(budget),
        timings: None,
        solver_failure: None,
    })
}

fn run_dconv(a: &DconvArgs) -> Result<Outcome, Error> {
    let f = oracle(&a.f)?;
    let report = oracle_dconv(&f, a.lipschitz, a.eps_oracle)?;
    let mut out = Outcome::new(serde_json::to_value(&report)?);
    out.samples_used = f.draws();
    Ok(out)
}

fn error_kind(e: &Error) -> &'static str {
    match e.root() {
        Error::Resource { .. } => "resource",
        Error::SolverFailure { .. } => "solver",
        Error::Io(_) => "io",
        Error::Parse(_) | Error::Json(_) => "parse",
        _ => "invalid_input",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let (name, config, outcome) = match &cli.command {
        Command::Learn(a) => ("learn", serde_json::to_value(a), run_learn(a)),
        Command::TestTolerant(a) => ("test-tolerant", serde_json::to_value(a), run_tolerant(a)),
        Command::TestOneSided(a) => ("test-one-sided", serde_json::to_value(a), run_one_sided(a)),
        Command::Envelope(a) => ("envelope", serde_json::to_value(a), run_envelope(a)),
        Command::Spectrum(a) => ("spectrum", serde_json::to_value(a), run_spectrum(a)),
        Command::OracleDconv(a) => ("oracle-dconv", serde_json::to_value(a), run_dconv(a)),
    };
    let mut report = Map::new();
    report.insert("schema".into(), SCHEMA.into());
    report.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    report.insert("command".into(), name.into());
    report.insert("config".into(), config.unwrap_or(Value::Null));
    let mut wall = Map::new();
    let code = match outcome {
        Ok(out) => {
            let failure = out.solver_failure.clone();
            match &failure {
                None => report.insert("status".into(), "ok".into()),
                Some(msg) => {
                    report.insert("error".into(), json!({ "kind": "solver", "message": msg }));
                    report.insert("status".into(), "error".into())
                }
            };
            if let Some(v) = out.verdict {
                report.insert(
                    "verdict".into(),
                    serde_json::to_value(v).unwrap_or(Value::Null),
                );
            }
            report.insert("samples_used".into(), out.samples_used.into());
            if let Some(b) = out.sample_budget {
                report.insert("sample_budget".into(), b.into());
            }
            report.insert("result".into(), out.result);
            if let Some(t) = out.timings {
                wall.insert("stages".into(), t);
            }
            match (failure, out.verdict) {
                (Some(_), _) => 3,
                (None, Some(Verdict::Reject)) => 1,
                _ => 0,
            }
        }
        Err(e) => {
            report.insert("status".into(), "error".into());
            report.insert(
                "error".into(),
                json!({ "kind": error_kind(&e), "message": e.to_string() }),
            );
            if e.is_resource_or_solver() {
                3
            } else {
                2
            }
        }
    };
    wall.insert("seconds".into(), start.elapsed().as_secs_f64().into());
    report.insert("wall_time".into(), Value::Object(wall));
    let text = serde_json::to_string_pretty(&Value::Object(report)).unwrap_or_default();
    match &cli.report {
        Some(path) => {
            if let Err(e) = fs::write(path, text + "\n") {
                eprintln!("cannot write report: {e}");
                return ExitCode::from(2);
            }
        }
        None => {
            // a closed pipe is not worth a panic
            let _ = writeln!(std::io::stdout(), "{text}");
        }
    }
    ExitCode::from(code)
}

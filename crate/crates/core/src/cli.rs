//! Command-line front end.
//!
//! Exit codes: 0 success, 1 gate failure, 2 configuration error,
//! 3 computation error, 4 sweep with failed rows.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Needs, RunConfig};
use crate::error::{Error, Result};
use crate::heatflow::FlowDiagnostics;
use crate::obstruct::lambda_sweep;
use crate::output::{format_float, plot_data, sweep_csv, write_json};
use crate::pipeline::{
    analyze_all, evaluate_gates, run_flow, survey_planes, validate_gates, DecaySummary, FlowMetrics,
};
use crate::rational::BUILTIN_FAMILIES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    GateFailure = 1,
    ConfigError = 2,
    ComputationError = 3,
    Partial = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "necklab",
    version,
    about = "Neck expansions and obstruction identities for bubbling harmonic maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Args)]
pub struct Options {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Random seed (overrides seed).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Heat-flow time step (overrides heatflow.tau).
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Heat-flow iteration cap (overrides heatflow.max_iters).
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    /// Heat-flow residual tolerance (overrides heatflow.tol).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fit the neck expansion and report the identities for every lambda.
    Analyze,
    /// Lambda sweep: CSV rows plus fitted scaling exponents.
    Sweep,
    /// Evaluate the configured gates; exit 1 if any fails.
    Verify,
    /// Solve the Dirichlet problem on an annulus by harmonic-map heat flow.
    Heatflow,
    /// Classify plane quadruples and run the constrained sampler.
    Planes,
    /// List the built-in families.
    Families,
}

/// Error tagged with the exit status it maps to.
struct Failure {
    status: ExitStatus,
    error: Error,
}

fn config_err(error: Error) -> Failure {
    Failure {
        status: ExitStatus::ConfigError,
        error,
    }
}

fn compute_err(error: Error) -> Failure {
    let status = match error {
        Error::Config(_) => ExitStatus::ConfigError,
        _ => ExitStatus::ComputationError,
    };
    Failure { status, error }
}

type Outcome = std::result::Result<ExitStatus, Failure>;

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main_entry() -> i32 {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> i32 {
    let outcome = execute(&cli);
    match outcome {
        Ok(status) => status.code(),
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.status.code()
        }
    }
}

fn execute(cli: &Cli) -> Outcome {
    if let Some(jobs) = cli.options.jobs {
        if jobs == 0 {
            return Err(config_err(Error::Config("--jobs must be >= 1".into())));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| config_err(Error::Config(format!("cannot set --jobs: {e}"))))?;
    }
    if cli.command == Command::Families {
        return families();
    }
    let cfg = load(&cli.options).map_err(config_err)?;
    match cli.command {
        Command::Analyze => analyze(&cfg),
        Command::Sweep => sweep(&cfg),
        Command::Verify => verify(&cfg),
        Command::Heatflow => heatflow(&cfg),
        Command::Planes => planes(&cfg),
        Command::Families => unreachable!(),
    }
}

fn load(o: &Options) -> Result<RunConfig> {
    let path = o
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &o.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if o.tau.is_some() || o.max_iters.is_some() || o.tol.is_some() {
        let h = cfg
            .heatflow
            .as_mut()
            .ok_or_else(|| Error::Config("--tau, --max-iters and --tol need a \"heatflow\" section".into()))?;
        if o.tau.is_some() {
            h.tau = o.tau;
        }
        if let Some(n) = o.max_iters {
            h.max_iters = n;
        }
        if let Some(tol) = o.tol {
            h.tol = tol;
        }
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> std::result::Result<&Path, Failure> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).map_err(|e| compute_err(Error::Io(format!("cannot create {}: {e}", dir.display()))))?;
    Ok(dir)
}

fn json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> std::result::Result<(), Failure> {
    write_json(&dir.join(name), value).map_err(compute_err)
}

fn text(dir: &Path, name: &str, contents: &str) -> std::result::Result<(), Failure> {
    fs::write(dir.join(name), contents).map_err(|e| compute_err(e.into()))
}

fn families() -> Outcome {
    #[derive(Serialize)]
    struct Entry {
        name: &'static str,
        description: &'static str,
    }
    let list: Vec<Entry> = BUILTIN_FAMILIES
        .iter()
        .map(|&(name, description)| Entry { name, description })
        .collect();
    print!("{}", crate::output::to_json(&list).map_err(compute_err)?);
    Ok(ExitStatus::Success)
}

fn analyze(cfg: &RunConfig) -> Outcome {
    cfg.validate(&[Needs::Analysis { min_lambdas: 1 }])
        .map_err(config_err)?;
    let analyses = analyze_all(cfg).map_err(compute_err)?;
    let dir = out_dir(cfg)?;
    let mut decay: Vec<DecaySummary> = Vec::new();
    for (i, a) in analyses.iter().enumerate() {
        json(dir, &format!("expansion_{i}.json"), &a.expansion)?;
        json(dir, &format!("report_{i}.json"), &a.report)?;
        text(dir, &format!("decay_{i}.dat"), &plot_data(&a.profile))?;
        decay.push(a.decay_summary());
        println!(
            "lambda={} eq15={} eq16={} |q|={} slope_left={} slope_right={}",
            format_float(a.report.lambda),
            format_float(a.report.eq15),
            format_float(a.report.eq16),
            format_float(a.report.q_norm),
            format_float(a.first_order.slope_left),
            format_float(a.first_order.slope_right),
        );
    }
    json(dir, "decay.json", &decay)?;
    Ok(ExitStatus::Success)
}

fn sweep(cfg: &RunConfig) -> Outcome {
    cfg.validate(&[Needs::Analysis { min_lambdas: 2 }])
        .map_err(config_err)?;
    let family = cfg.family().map_err(config_err)?;
    let result = lambda_sweep(&family, &cfg.lambdas, &cfg.sweep_settings()).map_err(compute_err)?;
    let dir = out_dir(cfg)?;
    text(dir, "sweep.csv", &sweep_csv(&result).map_err(compute_err)?)?;
    json(dir, "sweep.json", &result)?;
    for f in &result.failures {
        eprintln!("row lambda={} failed: {}", format_float(f.lambda), f.error);
    }
    println!("{} rows, {} failed", result.rows.len(), result.failures.len());
    Ok(if result.partial {
        ExitStatus::Partial
    } else {
        ExitStatus::Success
    })
}

fn verify(cfg: &RunConfig) -> Outcome {
    validate_gates(cfg).map_err(config_err)?;
    let report = evaluate_gates(cfg).map_err(compute_err)?;
    let dir = out_dir(cfg)?;
    json(dir, "gates.json", &report)?;
    for g in &report.gates {
        println!(
            "{} {} = {}",
            if g.pass { "PASS" } else { "FAIL" },
            g.check,
            format_float(g.value)
        );
    }
    Ok(if report.pass {
        ExitStatus::Success
    } else {
        ExitStatus::GateFailure
    })
}

fn heatflow(cfg: &RunConfig) -> Outcome {
    #[derive(Serialize)]
    struct FlowReport<'a> {
        metrics: &'a FlowMetrics,
        diagnostics: &'a FlowDiagnostics,
        failure: &'a Option<String>,
    }
    cfg.validate(&[Needs::Heatflow]).map_err(config_err)?;
    let run = run_flow(cfg).map_err(compute_err)?;
    let dir = out_dir(cfg)?;
    json(
        dir,
        "heatflow.json",
        &FlowReport {
            metrics: &run.metrics,
            diagnostics: &run.solution.diagnostics,
            failure: &run.failure,
        },
    )?;
    let s = &run.solution.sample;
    let g = s.grid();
    let mut csv = String::new();
    for j in 0..g.n_t {
        for k in 0..g.n_theta {
            csv.push_str(&format_float(g.t(j)));
            csv.push(',');
            csv.push_str(&format_float(g.theta(k)));
            for x in s.value(j, k) {
                csv.push(',');
                csv.push_str(&format_float(*x));
            }
            csv.push('\n');
        }
    }
    text(dir, "heatflow_solution.csv", &csv)?;
    println!(
        "iterations={} converged={} residual_reduction={}",
        run.metrics.iterations,
        run.metrics.converged,
        format_float(run.metrics.residual_reduction)
    );
    match run.failure {
        Some(msg) => {
            eprintln!("error: {msg}");
            Ok(ExitStatus::ComputationError)
        }
        None => Ok(ExitStatus::Success),
    }
}

fn planes(cfg: &RunConfig) -> Outcome {
    cfg.validate(&[Needs::Planes]).map_err(config_err)?;
    let survey = survey_planes(cfg, None).map_err(compute_err)?;
    let dir = out_dir(cfg)?;
    json(dir, "planes.json", &survey)?;
    for d in &survey.dims {
        println!(
            "n={} coincident={} isoclinic={} generic={} not_admissible={}",
            d.n, d.coincident, d.isoclinic, d.generic, d.not_admissible
        );
    }
    Ok(ExitStatus::Success)
}

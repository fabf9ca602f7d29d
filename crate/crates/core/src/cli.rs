//! Batch front end: JSON config in, JSON report and CSV series out.
//!
//! Exit codes: 0 when a run completes (whatever the verdict), 1 for
//! command-line, config or expression errors, 2 for numerical failures
//! during a run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::certify::{self, CertifyConfig};
use crate::ctrl::{self, BundleSource, ControlBundle, MembershipReport, PropertyCheck, SampleGrid, Sides};
use crate::funcspace::{Grid, GridFunction, ModulusParams};
use crate::mnc;
use crate::operator::{Operator, OperatorError, ProblemSpec};

#[derive(Debug, Parser)]
#[command(name = "qie", version, about = "Quadratic integral equation solver and existence diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Picard iteration from the configured starting function.
    Solve(RunArgs),
    /// Check the existence conditions and print a verdict.
    Certify(RunArgs),
    /// Set iteration A_{k+1} = conv(T A_k) with the measure-of-noncompactness surrogate.
    Mnc(RunArgs),
    /// Sampled membership checks for the control functions.
    CheckFunctions(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "grid-n")]
    pub grid_n: Option<usize>,
    #[arg(long)]
    pub tmax: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub g: String,
    pub mu1: String,
    pub mu2: String,
    pub zeta1: String,
    pub zeta2: String,
    #[serde(default = "one")]
    pub lambda: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub t_max: f64,
    pub n: usize,
    /// Start of the tail window; `0.75·t_max` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_start: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            t_max: 30.0,
            n: 4001,
            tail_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    /// Starting function, an expression in `t`.
    pub x0: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: 1e-10,
            max_iter: 60,
            x0: "0".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MncSection {
    pub ensemble_size: usize,
    /// Members of `A₀` are uniform node-wise noise of this amplitude around zero.
    pub amplitude: f64,
    pub hull_samples: usize,
    pub steps: usize,
    #[serde(rename = "L_list", skip_serializing_if = "Option::is_none")]
    pub l_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
}

impl Default for MncSection {
    fn default() -> Self {
        MncSection {
            ensemble_size: 8,
            amplitude: 1.0,
            hull_samples: 8,
            steps: 25,
            l_list: None,
            eps_list: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplesSection {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub deltas: Vec<f64>,
}

impl Default for SamplesSection {
    fn default() -> Self {
        SamplesSection {
            lo: 1e-6,
            hi: 1e3,
            count: 200,
            deltas: ctrl::DEFAULT_DELTAS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSection>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub mnc: MncSection,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functions: Option<BundleSource>,
    #[serde(default)]
    pub samples: SamplesSection,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad command line, unreadable or invalid config, unparsable expression.
    Config(String),
    /// A numerical failure while running.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

pub fn emit_json(value: &impl Serialize, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

impl RunConfig {
    /// Applies command-line overrides and fills every derived default, so the
    /// echoed config is exactly what ran.
    pub fn effective(mut self, args: &RunArgs) -> Result<RunConfig, CliError> {
        if let Some(seed) = args.seed {
            self.seed = seed;
        }
        if let Some(n) = args.grid_n {
            self.grid.n = n;
        }
        if let Some(t) = args.tmax {
            self.grid.t_max = t;
        }
        let grid = self.grid()?;
        let tail = self.grid.tail_start.unwrap_or(0.75 * grid.t_max());
        if !(0.0..grid.t_max()).contains(&tail) {
            return Err(CliError::Config(format!(
                "grid.tail_start = {tail} must lie in [0, t_max = {})",
                grid.t_max()
            )));
        }
        self.grid.tail_start = Some(tail);
        let defaults = ModulusParams::default_for(&grid);
        let mp = ModulusParams::new(
            &grid,
            self.mnc.l_list.as_deref().unwrap_or(defaults.l_list()),
            self.mnc.eps_list.as_deref().unwrap_or(defaults.eps_list()),
        )
        .map_err(|e| CliError::Config(format!("mnc.L_list / mnc.eps_list: {e}")))?;
        self.mnc.l_list = Some(mp.l_list().to_vec());
        self.mnc.eps_list = Some(mp.eps_list().to_vec());
        Ok(self)
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Grid::new(self.grid.t_max, self.grid.n).map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn tail_start(&self) -> f64 {
        self.grid.tail_start.unwrap_or(0.75 * self.grid.t_max)
    }

    pub fn modulus_params(&self, grid: &Grid) -> Result<ModulusParams, CliError> {
        match (&self.mnc.l_list, &self.mnc.eps_list) {
            (Some(l), Some(e)) => ModulusParams::new(grid, l, e).map_err(|e| CliError::Config(format!("mnc: {e}"))),
            _ => Ok(ModulusParams::default_for(grid)),
        }
    }

    pub fn problem(&self) -> Result<ProblemSpec, CliError> {
        let p = self
            .problem
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no `problem` section".into()))?;
        ProblemSpec::parse(&p.g, &p.mu1, &p.mu2, &p.zeta1, &p.zeta2, p.lambda).map_err(|e| match e {
            OperatorError::Parse { slot, source } => CliError::Config(format!("problem.{slot}: {source}")),
            other => CliError::Config(format!("problem: {other}")),
        })
    }

    pub fn bundle(&self) -> Result<ControlBundle, CliError> {
        let src = self
            .functions
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no `functions` section".into()))?;
        ControlBundle::parse(src).map_err(|e| CliError::Config(format!("functions: {e}")))
    }

    pub fn sample_grid(&self) -> Result<SampleGrid, CliError> {
        let s = &self.samples;
        if !(s.lo > 0.0 && s.hi > s.lo && s.count >= 2) {
            return Err(CliError::Config(format!(
                "samples: need 0 < lo < hi and count >= 2, got lo = {}, hi = {}, count = {}",
                s.lo, s.hi, s.count
            )));
        }
        Ok(SampleGrid::log_spaced(s.lo, s.hi, s.count))
    }

    /// SHA-256 of the compact serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}

/// Per-step evaluation of both contraction inequalities along a σ̂ series.
#[derive(Debug, Clone, Serialize)]
pub struct StepSides {
    pub step: usize,
    pub sigma_prev: f64,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geraghty: Option<Sides>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mizoguchi_takahashi: Option<Sides>,
}

/// Evaluates the inequalities whose slots are all present in `b` on consecutive
/// `(σ̂(A_k), σ̂(A_{k+1}))` pairs.
pub fn sides_along(b: &ControlBundle, sigmas: &[f64]) -> Result<Vec<StepSides>, CliError> {
    let has31 = b.alpha.is_some() && b.beta.is_some() && b.eta.is_some() && b.phi.is_some() && b.f.is_some();
    let has37 = b.chi.is_some() && b.omega.is_some() && b.phi.is_some() && b.f.is_some();
    if !has31 && !has37 {
        return Ok(Vec::new());
    }
    sigmas
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            Ok(StepSides {
                step: k + 1,
                sigma_prev: w[0],
                sigma: w[1],
                geraghty: has31.then(|| ctrl::thm31_sides(b, w[0], w[1])).transpose().map_err(runtime)?,
                mizoguchi_takahashi: has37.then(|| ctrl::thm37_sides(b, w[0], w[1])).transpose().map_err(runtime)?,
            })
        })
        .collect()
}

/// Membership checks for every slot present in the bundle.
pub fn check_bundle(b: &ControlBundle, grid: &SampleGrid, deltas: &[f64]) -> Result<Value, CliError> {
    let mut reports: Vec<MembershipReport> = vec![ctrl::check_theta(b.o_form, &b.xi, grid).map_err(runtime)?];
    if let Some(e) = &b.alpha {
        reports.push(ctrl::check_geraghty(e, grid, deltas).map_err(runtime)?);
    }
    if let Some(e) = &b.eta {
        reports.push(ctrl::check_psi(e, grid).map_err(runtime)?);
    }
    if let Some(e) = &b.beta {
        reports.push(ctrl::check_continuous_nonneg("beta", e, grid).map_err(runtime)?);
    }
    if let Some(e) = &b.phi {
        reports.push(ctrl::check_continuous_nonneg("phi", e, grid).map_err(runtime)?);
    }
    if let Some(e) = &b.f {
        reports.push(ctrl::check_f(e, grid).map_err(runtime)?);
    }
    if let Some(e) = &b.chi {
        reports.push(ctrl::check_mt(e, grid).map_err(runtime)?);
    }
    if let Some(e) = &b.omega {
        reports.push(ctrl::check_omega(e, grid).map_err(runtime)?);
    }
    let dominance: Option<PropertyCheck> = if b.eta.is_some() && b.beta.is_some() {
        Some(b.eta_dominates_beta(grid).map_err(runtime)?)
    } else {
        None
    };
    Ok(json!({ "memberships": reports, "eta_dominates_beta": dominance }))
}

struct Outcome {
    result: Value,
    csv: Option<String>,
    stages: Vec<(&'static str, f64)>,
}

fn csv_num(v: f64) -> String {
    format!("{v:e}")
}

fn run_solve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = cfg.problem()?;
    let grid = cfg.grid()?;
    let x0_expr = crate::expr::parse(&cfg.solver.x0, &["t"])
        .map_err(|e| CliError::Config(format!("solver.x0: {e}")))?;
    let x0 = GridFunction::from_expr(&grid, &x0_expr).map_err(runtime)?;
    let start = Instant::now();
    let op = Operator::new(&p, &grid).map_err(runtime)?;
    let build = start.elapsed().as_secs_f64();
    let report = op.picard_solve(&x0, cfg.solver.tol, cfg.solver.max_iter).map_err(runtime)?;
    let mut csv = String::from("iter,residual\n");
    for (k, r) in report.residuals.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", k + 1, csv_num(*r));
    }
    Ok(Outcome {
        result: json!({ "solve": report.summary() }),
        csv: Some(csv),
        stages: vec![("operator_build", build), ("picard", report.elapsed.as_secs_f64())],
    })
}

fn run_certify(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = cfg.problem()?;
    let grid = cfg.grid()?;
    let mp = cfg.modulus_params(&grid)?;
    let start = Instant::now();
    let report = certify::certify_existence(&p, &grid, &mp, cfg.tail_start(), &cfg.certify, cfg.seed).map_err(runtime)?;
    let mut csv = String::from("t,D1,D2\n");
    for (t, d1, d2) in report.decay_rows() {
        let _ = writeln!(csv, "{},{},{}", csv_num(t), csv_num(d1), csv_num(d2));
    }
    Ok(Outcome {
        result: json!({ "certification": report }),
        csv: Some(csv),
        stages: vec![("certify", start.elapsed().as_secs_f64())],
    })
}

fn run_mnc(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = cfg.problem()?;
    let grid = cfg.grid()?;
    let mp = cfg.modulus_params(&grid)?;
    let bundle = cfg.functions.as_ref().map(|_| cfg.bundle()).transpose()?;
    let start = Instant::now();
    let op = Operator::new(&p, &grid).map_err(runtime)?;
    let a0 = mnc::random_ensemble(&grid, cfg.mnc.ensemble_size, 0.0, cfg.mnc.amplitude, cfg.seed);
    let record = mnc::set_iterate(&op, &a0, cfg.mnc.steps, cfg.mnc.hull_samples, &mp, cfg.tail_start(), cfg.seed)
        .map_err(runtime)?;
    let sides = match &bundle {
        Some(b) => sides_along(b, &record.sigma_series())?,
        None => Vec::new(),
    };
    let mut csv = String::from("step,w0_hat,alpha_hat,sigma_hat,ratio\n");
    for s in &record.steps {
        let ratio = s.ratio.map(csv_num).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            s.step,
            csv_num(s.w0_hat),
            csv_num(s.alpha_hat),
            csv_num(s.sigma_hat),
            ratio
        );
    }
    Ok(Outcome {
        result: json!({ "set_iteration": record, "inequalities": sides }),
        csv: Some(csv),
        stages: vec![("set_iteration", start.elapsed().as_secs_f64())],
    })
}

fn run_check_functions(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let b = cfg.bundle()?;
    let grid = cfg.sample_grid()?;
    let start = Instant::now();
    let result = check_bundle(&b, &grid, &cfg.samples.deltas)?;
    Ok(Outcome {
        result: json!({ "functions": result }),
        csv: None,
        stages: vec![("checks", start.elapsed().as_secs_f64())],
    })
}

/// Rejects NaN and infinities anywhere in a report (serde writes them as null).
fn check_finite(v: &Value, at: &str) -> Result<(), CliError> {
    match v {
        Value::Number(n) if n.as_f64().is_some_and(|f| !f.is_finite()) => {
            Err(runtime(format!("non-finite number at {at}")))
        }
        Value::Array(items) => items
            .iter()
            .enumerate()
            .try_for_each(|(i, x)| check_finite(x, &format!("{at}[{i}]"))),
        Value::Object(map) => map.iter().try_for_each(|(k, x)| check_finite(x, &format!("{at}.{k}"))),
        _ => Ok(()),
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Solve(_) => "solve",
        Command::Certify(_) => "certify",
        Command::Mnc(_) => "mnc",
        Command::CheckFunctions(_) => "check-functions",
    }
}

/// Runs one parsed command and writes its outputs.
pub fn execute(cli: &Cli) -> Result<Value, CliError> {
    let started = Instant::now();
    let args = match &cli.command {
        Command::Solve(a) | Command::Certify(a) | Command::Mnc(a) | Command::CheckFunctions(a) => a,
    };
    let cfg = load_config(&args.config)?.effective(args)?;
    let outcome = match &cli.command {
        Command::Solve(_) => run_solve(&cfg)?,
        Command::Certify(_) => run_certify(&cfg)?,
        Command::Mnc(_) => run_mnc(&cfg)?,
        Command::CheckFunctions(_) => run_check_functions(&cfg)?,
    };
    check_finite(&outcome.result, "result")?;
    let mut stages = serde_json::Map::new();
    for (name, secs) in &outcome.stages {
        stages.insert((*name).into(), json!(secs));
    }
    stages.insert("total".into(), json!(started.elapsed().as_secs_f64()));
    let report = json!({
        "subcommand": subcommand_name(&cli.command),
        "config_hash": cfg.hash(),
        "config": cfg,
        "result": outcome.result,
        "timing": stages,
    });
    match &args.out {
        Some(path) => emit_json(&report, path)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?),
    }
    match (&args.csv, outcome.csv) {
        (Some(path), Some(text)) => {
            fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?
        }
        (Some(_), None) => eprintln!("note: {} produces no CSV series", subcommand_name(&cli.command)),
        _ => {}
    }
    Ok(report)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("QIE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("QIE_THREADS must be a positive integer, got `{v}`")))?;
    #[cfg(feature = "parallel")]
    {
        // Fails only if the pool is already up (repeated in-process runs); keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

/// Entry point shared by the binary and tests; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = configure_threads().and_then(|_| execute(&cli));
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

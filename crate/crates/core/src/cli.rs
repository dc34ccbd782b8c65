//! Command-line front end: `run` an optimization from a JSON config and
//! `export` a trace as convergence CSV.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{self, write_trace, AdmmConfig, Budget, Mode, Problem, RunError, RunResult, Solvers, StopReason, TraceRecord};
use crate::bandit::{BanditState, ZSolver, DEFAULT_EXHAUSTIVE_CAP, DEFAULT_F_HAT, DEFAULT_PRIOR};
use crate::bo::{BoSolver, RandomSearch, ThetaSolver};
use crate::eval::{Backend, Benchmark, EvalError, EvalRequest, SubprocessBackend, SubprocessConfig, SubprocessPool};
use crate::solver::SolverError;
use crate::space::{SearchSpace, SpaceDocument};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EVALUATOR: i32 = 3;
pub const EXIT_BUDGET_ZERO: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ThetaSolverKind {
    Random,
    Bo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ZSolverKind {
    Random,
    Exhaustive,
    Cmab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Unconstrained,
    Constrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvaluatorSpec {
    Builtin {
        builtin: String,
    },
    Command {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_seconds: f64,
        #[serde(default = "default_workers")]
        workers: usize,
    },
}

fn default_timeout() -> f64 {
    300.0
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverChoice {
    #[serde(default = "default_theta_solver")]
    pub theta: ThetaSolverKind,
    #[serde(default = "default_z_solver")]
    pub z: ZSolverKind,
}

fn default_theta_solver() -> ThetaSolverKind {
    ThetaSolverKind::Bo
}

fn default_z_solver() -> ZSolverKind {
    ZSolverKind::Exhaustive
}

impl Default for SolverChoice {
    fn default() -> Self {
        Self { theta: default_theta_solver(), z: default_z_solver() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub max_evals: Option<u64>,
    pub max_seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubBudgets {
    #[serde(default = "default_theta_budget")]
    pub theta: usize,
    #[serde(default = "default_z_budget")]
    pub z: usize,
}

fn default_theta_budget() -> usize {
    admm::DEFAULT_THETA_BUDGET
}

fn default_z_budget() -> usize {
    admm::DEFAULT_Z_BUDGET
}

impl Default for SubBudgets {
    fn default() -> Self {
        Self { theta: default_theta_budget(), z: default_z_budget() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub trace: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// The run configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required for external evaluators; builtin benchmarks bring their own.
    #[serde(default)]
    pub space: Option<SpaceDocument>,
    pub evaluator: EvaluatorSpec,
    #[serde(default)]
    pub solvers: SolverChoice,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_f_hat")]
    pub f_hat: f64,
    #[serde(default = "default_prior")]
    pub priors: f64,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Defaults to constrained when thresholds are given.
    #[serde(default)]
    pub mode: Option<ModeKind>,
    pub budget: BudgetSpec,
    pub seed: u64,
    #[serde(default)]
    pub sub_budgets: SubBudgets,
    #[serde(default)]
    pub random_init: bool,
    #[serde(default = "default_cap")]
    pub exhaustive_cap: usize,
    #[serde(default)]
    pub outputs: OutputPaths,
}

fn default_rho() -> f64 {
    admm::DEFAULT_RHO
}

fn default_f_hat() -> f64 {
    DEFAULT_F_HAT
}

fn default_prior() -> f64 {
    DEFAULT_PRIOR
}

fn default_cap() -> usize {
    DEFAULT_EXHAUSTIVE_CAP
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("evaluator error: {0}")]
    Evaluator(String),
    #[error("budget allows no evaluations")]
    BudgetZero,
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Evaluator(_) => EXIT_EVALUATOR,
            CliError::BudgetZero => EXIT_BUDGET_ZERO,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::BudgetZero => CliError::BudgetZero,
            RunError::Evaluator(e) => CliError::Evaluator(e.to_string()),
            RunError::Solver(SolverError::Gp(e)) => CliError::Internal(e.to_string()),
            e @ (RunError::InvalidRho(_)
            | RunError::InvalidEpsilon { .. }
            | RunError::EpsilonCount { .. }
            | RunError::Solver(_)) => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "admm-opt", version, about = "Joint algorithm selection and hyperparameter optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an optimization.
    Run(RunArgs),
    /// Convert a trace into convergence CSV.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_evals: Option<u64>,
    #[arg(long)]
    pub max_seconds: Option<f64>,
    #[arg(long, value_enum)]
    pub theta_solver: Option<ThetaSolverKind>,
    #[arg(long, value_enum)]
    pub z_solver: Option<ZSolverKind>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub f_hat: Option<f64>,
    /// Constraint threshold; repeat once per constraint. Replaces the config's list.
    #[arg(long = "epsilon")]
    pub epsilons: Vec<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeKind>,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// External evaluator command line, split with shell quoting rules.
    #[arg(long)]
    pub evaluator_cmd: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: ExportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncumbentReport {
    pub z: BTreeMap<String, String>,
    pub theta_int: BTreeMap<String, i64>,
    pub theta_cont: BTreeMap<String, f64>,
    pub loss: f64,
    pub constraints: Vec<f64>,
    pub feasible: bool,
    pub eval_index: u64,
    pub wall_ms: f64,
}

/// Final summary written after a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub incumbent: Option<IncumbentReport>,
    pub loss: Option<f64>,
    pub feasible: Option<bool>,
    pub evaluations: u64,
    pub wall_ms: f64,
    pub elapsed_ms: f64,
    pub feasible_fraction: f64,
    pub failed_evaluations: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub iterations: usize,
    pub final_residual: Option<f64>,
    pub stop_reason: String,
    pub mode: ModeKind,
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides; flags win over the document.
    pub fn apply(&mut self, args: &RunArgs) -> Result<(), CliError> {
        if let Some(v) = args.seed {
            self.seed = v;
        }
        if let Some(v) = args.max_evals {
            self.budget.max_evals = Some(v);
        }
        if let Some(v) = args.max_seconds {
            self.budget.max_seconds = Some(v);
        }
        if let Some(v) = args.theta_solver {
            self.solvers.theta = v;
        }
        if let Some(v) = args.z_solver {
            self.solvers.z = v;
        }
        if let Some(v) = args.rho {
            self.rho = v;
        }
        if let Some(v) = args.f_hat {
            self.f_hat = v;
        }
        if !args.epsilons.is_empty() {
            self.epsilons = args.epsilons.clone();
        }
        if let Some(v) = args.mode {
            self.mode = Some(v);
        }
        if let Some(p) = &args.trace_out {
            self.outputs.trace = Some(p.clone());
        }
        if let Some(p) = &args.report_out {
            self.outputs.report = Some(p.clone());
        }
        if let Some(cmd) = &args.evaluator_cmd {
            let command = shlex::split(cmd)
                .filter(|c| !c.is_empty())
                .ok_or_else(|| CliError::Config(format!("cannot parse evaluator command {cmd:?}")))?;
            let (timeout_seconds, workers) = match &self.evaluator {
                EvaluatorSpec::Command { timeout_seconds, workers, .. } => (*timeout_seconds, *workers),
                EvaluatorSpec::Builtin { .. } => (default_timeout(), default_workers()),
            };
            self.evaluator = EvaluatorSpec::Command { command, timeout_seconds, workers };
        }
        Ok(())
    }

    pub fn mode(&self) -> ModeKind {
        self.mode.unwrap_or(if self.epsilons.is_empty() {
            ModeKind::Unconstrained
        } else {
            ModeKind::Constrained
        })
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.f_hat.is_finite() && self.f_hat > 0.0) {
            return bad(format!("f_hat must be positive, got {}", self.f_hat));
        }
        if !(self.priors.is_finite() && self.priors > 0.0) {
            return bad(format!("priors must be positive, got {}", self.priors));
        }
        if let Some((i, e)) = self.epsilons.iter().enumerate().find(|(_, e)| !(e.is_finite() && **e >= 0.0)) {
            return bad(format!("epsilons[{i}] must be non-negative, got {e}"));
        }
        if self.budget.max_evals.is_none() && self.budget.max_seconds.is_none() {
            return bad("budget needs max_evals or max_seconds".into());
        }
        if let Some(s) = self.budget.max_seconds {
            if s.is_nan() {
                return bad("budget.max_seconds is not a number".into());
            }
        }
        if let EvaluatorSpec::Command { command, timeout_seconds, workers } = &self.evaluator {
            if command.is_empty() {
                return bad("evaluator.command is empty".into());
            }
            if !(timeout_seconds.is_finite() && *timeout_seconds > 0.0) {
                return bad("evaluator.timeout_seconds must be positive".into());
            }
            if *workers == 0 {
                return bad("evaluator.workers must be at least 1".into());
            }
        }
        Ok(())
    }
}

fn budget_is_zero(b: &BudgetSpec) -> bool {
    b.max_evals == Some(0) || b.max_seconds.is_some_and(|s| s <= 0.0)
}

/// The search space and evaluator described by a config.
pub fn build_problem(config: &RunConfig) -> Result<(SearchSpace, Box<dyn Backend>), CliError> {
    match &config.evaluator {
        EvaluatorSpec::Builtin { builtin } => {
            let bench = Benchmark::by_name(builtin).map_err(|e| {
                CliError::Config(format!("{e}; available: {}", Benchmark::NAMES.join(", ")))
            })?;
            let space = bench.space().clone();
            if let Some(doc) = &config.space {
                if *doc != space.document() {
                    return Err(CliError::Config(format!(
                        "space does not match builtin benchmark `{builtin}`; omit it"
                    )));
                }
            }
            Ok((space, Box::new(bench)))
        }
        EvaluatorSpec::Command { command, timeout_seconds, workers } => {
            let doc = config
                .space
                .as_ref()
                .ok_or_else(|| CliError::Config("space is required with an external evaluator".into()))?;
            let space = SearchSpace::build(doc).map_err(|e| CliError::Config(e.to_string()))?;
            let mut sub = SubprocessConfig::new(command.clone());
            sub.timeout = Duration::from_secs_f64(*timeout_seconds);
            let backend: Box<dyn Backend> = if *workers > 1 {
                Box::new(SubprocessPool::spawn(sub, *workers).map_err(evaluator_error)?)
            } else {
                Box::new(SubprocessBackend::spawn(sub).map_err(evaluator_error)?)
            };
            Ok((space, backend))
        }
    }
}

fn evaluator_error(e: EvalError) -> CliError {
    CliError::Evaluator(e.to_string())
}

/// Solvers described by a config.
pub fn build_solvers(config: &RunConfig, space: &SearchSpace) -> Result<Solvers, CliError> {
    let theta = match config.solvers.theta {
        ThetaSolverKind::Random => ThetaSolver::Random(RandomSearch),
        ThetaSolverKind::Bo => ThetaSolver::Bo(BoSolver::new()),
    };
    let z = match config.solvers.z {
        ZSolverKind::Random => ZSolver::Random,
        ZSolverKind::Exhaustive => ZSolver::Exhaustive { cap: config.exhaustive_cap },
        ZSolverKind::Cmab => ZSolver::Cmab(
            BanditState::new(&space.choice_counts(), config.priors, config.priors, config.f_hat)
                .map_err(|e| CliError::Config(e.to_string()))?,
        ),
    };
    Ok(Solvers { theta, z })
}

pub fn admm_config(config: &RunConfig) -> AdmmConfig {
    AdmmConfig {
        rho: config.rho,
        theta_budget: config.sub_budgets.theta,
        z_budget: config.sub_budgets.z,
        budget: Budget { max_evals: config.budget.max_evals, max_seconds: config.budget.max_seconds },
        seed: config.seed,
        random_init: config.random_init,
        ..AdmmConfig::default()
    }
}

/// Runs the optimization a config describes, without writing outputs.
pub fn execute(config: &RunConfig) -> Result<(RunResult, Report, SearchSpace), CliError> {
    config.validate()?;
    if budget_is_zero(&config.budget) {
        return Err(CliError::BudgetZero);
    }
    let (space, mut backend) = build_problem(config)?;
    let mut solvers = build_solvers(config, &space)?;
    let mode = match config.mode() {
        ModeKind::Unconstrained => Mode::Unconstrained,
        ModeKind::Constrained => Mode::Constrained,
    };
    let started = Instant::now();
    let problem = Problem { space: &space, backend: backend.as_mut(), epsilons: config.epsilons.clone(), mode };
    let result = admm::run(problem, &mut solvers, &admm_config(config))?;
    let report = report(config, &space, &result, started.elapsed())?;
    Ok((result, report, space))
}

fn report(config: &RunConfig, space: &SearchSpace, result: &RunResult, elapsed: Duration) -> Result<Report, CliError> {
    let incumbent = match &result.incumbent {
        Some(inc) => {
            let req = EvalRequest::from_candidate(space, &inc.config, 0).map_err(evaluator_error)?;
            Some(IncumbentReport {
                z: req.z,
                theta_int: req.theta_int,
                theta_cont: req.theta_cont,
                loss: inc.loss,
                constraints: inc.constraints.clone(),
                feasible: inc.feasible,
                eval_index: inc.eval_index,
                wall_ms: inc.wall_ms,
            })
        }
        None => None,
    };
    Ok(Report {
        loss: incumbent.as_ref().map(|i| i.loss),
        feasible: incumbent.as_ref().map(|i| i.feasible),
        incumbent,
        evaluations: result.evaluations,
        wall_ms: result.wall_ms,
        elapsed_ms: elapsed.as_secs_f64() * 1000.0,
        feasible_fraction: result.feasible_fraction(),
        failed_evaluations: result.failed_evaluations,
        cache_hits: result.cache_hits,
        cache_misses: result.cache_misses,
        iterations: result.iterations.len(),
        final_residual: result.final_residual(),
        stop_reason: match result.stop {
            StopReason::BudgetExhausted => "budget_exhausted".into(),
            StopReason::Converged => "converged".into(),
        },
        mode: config.mode(),
        seed: config.seed,
    })
}

/// `run` subcommand: load, override, execute, write the trace and report.
pub fn run_command(args: &RunArgs) -> Result<Report, CliError> {
    let mut config = RunConfig::load(&args.config)?;
    config.apply(args)?;
    let (result, report, _) = execute(&config)?;
    if let Some(path) = &config.outputs.trace {
        let file = File::create(path).map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
        write_trace(BufWriter::new(file), &result.trace)
            .map_err(|e| CliError::Internal(format!("writing {}: {e}", path.display())))?;
    }
    let text = serde_json::to_string_pretty(&report).expect("reports serialize");
    match &config.outputs.report {
        Some(path) => fs::write(path, text + "\n")
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?,
        None => println!("{text}"),
    }
    Ok(report)
}

/// One convergence row; `None` before the first (feasible) evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub wall_ms: f64,
    pub incumbent_loss: Option<f64>,
    pub feasible_incumbent_loss: Option<f64>,
}

/// Running best loss over all successful evaluations and over feasible ones.
/// Unparseable lines are skipped; their count is returned alongside.
pub fn convergence_rows<R: BufRead>(input: R) -> std::io::Result<(Vec<ConvergenceRow>, usize)> {
    let mut rows = Vec::new();
    let mut skipped = 0;
    let (mut best, mut best_feasible): (Option<f64>, Option<f64>) = (None, None);
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping malformed trace line: {e}");
                skipped += 1;
                continue;
            }
        };
        if !record.failed {
            best = Some(best.map_or(record.loss, |b| b.min(record.loss)));
            if record.feasible {
                best_feasible = Some(best_feasible.map_or(record.loss, |b| b.min(record.loss)));
            }
        }
        rows.push(ConvergenceRow { wall_ms: record.wall_ms, incumbent_loss: best, feasible_incumbent_loss: best_feasible });
    }
    Ok((rows, skipped))
}

pub fn write_convergence_csv<W: Write>(out: W, rows: &[ConvergenceRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["wall_ms", "incumbent_loss", "feasible_incumbent_loss"])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([r.wall_ms.to_string(), cell(r.incumbent_loss), cell(r.feasible_incumbent_loss)])?;
    }
    w.flush()?;
    Ok(())
}

/// `export` subcommand. Returns the number of skipped lines.
pub fn export_convergence(args: &ExportArgs) -> Result<usize, CliError> {
    let file = File::open(&args.trace).map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.trace.display())))?;
    let (rows, skipped) = convergence_rows(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("reading {}: {e}", args.trace.display())))?;
    let out = File::create(&args.out).map_err(|e| CliError::Config(format!("cannot create {}: {e}", args.out.display())))?;
    match args.format {
        ExportFormat::Csv => write_convergence_csv(BufWriter::new(out), &rows)
            .map_err(|e| CliError::Internal(format!("writing {}: {e}", args.out.display())))?,
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} malformed trace line(s)");
    }
    Ok(skipped)
}

/// Parses `args` and runs the chosen subcommand; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => run_command(a).map(|_| ()),
        Command::Export(a) => export_convergence(a).map(|_| ()),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

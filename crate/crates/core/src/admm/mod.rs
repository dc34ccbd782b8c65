//! The alternating optimization loop.
//!
//! Each iteration minimizes over the active hyperparameters (continuous
//! values, relaxed integers and, with constraints, the slacks), projects the
//! inactive relaxed integers, rounds to the consensus integers, re-selects
//! algorithms, and updates the multipliers. Every black-box call goes through
//! a [`Session`], which owns the cache, the budget, the failure policy, the
//! incumbent and the trace.

mod session;
mod state;
mod trace;

use log::{debug, info};
use rand::SeedableRng;
use thiserror::Error;

use crate::bandit::{ZMinimum, ZObjective, ZSolver};
use crate::bo::ThetaSolver;
use crate::eval::{Backend, EvalError};
use crate::solver::{BoxObjective, Observation, SolverError, SolverRng, WarmStart};
use crate::space::{project_and_round, ActiveSet, SearchSpace, ThetaVector, ZAssignment};

pub use session::{Budget, Session};
pub use state::{
    constraint_penalty, constraint_penalty_with, delta_min, solve_inactive, theta_penalty,
    update_lambda, update_mu, AdmmState,
};
pub use trace::{write_trace, Incumbent, Phase, TraceRecord};

use state::theta_penalty_at;

pub const DEFAULT_RHO: f64 = 1.0;
pub const DEFAULT_THETA_BUDGET: usize = 16;
pub const DEFAULT_Z_BUDGET: usize = 8;
pub const DEFAULT_STALL_ITERATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Thresholds, if any, are only monitored.
    Unconstrained,
    /// Thresholds are enforced through slacks and multipliers.
    Constrained,
}

#[derive(Debug, Clone)]
pub struct AdmmConfig {
    pub rho: f64,
    /// Objective calls per hyperparameter sub-problem.
    pub theta_budget: usize,
    /// Objective calls per selection sub-problem (ignored by exhaustive).
    pub z_budget: usize,
    pub budget: Budget,
    pub seed: u64,
    /// Start from a random point instead of box midpoints.
    pub random_init: bool,
    /// Iterations without incumbent change, at zero residual, before stopping.
    pub stall_iterations: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            theta_budget: DEFAULT_THETA_BUDGET,
            z_budget: DEFAULT_Z_BUDGET,
            budget: Budget { max_evals: Some(400), max_seconds: None },
            seed: 0,
            random_init: false,
            stall_iterations: DEFAULT_STALL_ITERATIONS,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("budget must allow at least one evaluation")]
    BudgetZero,
    #[error("penalty rho must be positive and finite, got {0}")]
    InvalidRho(f64),
    #[error("threshold {index} is {value}; thresholds must be finite and non-negative")]
    InvalidEpsilon { index: usize, value: f64 },
    #[error("{got} thresholds given but the evaluator reports {expected} constraints")]
    EpsilonCount { expected: usize, got: usize },
    #[error(transparent)]
    Solver(SolverError),
    #[error("evaluator failure: {0}")]
    Evaluator(EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    BudgetExhausted,
    Converged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationSummary {
    pub iter: usize,
    pub z: ZAssignment,
    pub residual: f64,
    pub theta_value: f64,
    pub z_value: f64,
    pub evaluations: u64,
    pub incumbent_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub incumbent: Option<Incumbent>,
    pub trace: Vec<TraceRecord>,
    pub iterations: Vec<IterationSummary>,
    pub stop: StopReason,
    pub state: AdmmState,
    pub evaluations: u64,
    pub feasible_evaluations: u64,
    pub failed_evaluations: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub wall_ms: f64,
}

impl RunResult {
    /// Consensus residual after the last completed iteration.
    pub fn final_residual(&self) -> Option<f64> {
        self.iterations.last().map(|s| s.residual)
    }

    pub fn feasible_fraction(&self) -> f64 {
        if self.evaluations == 0 {
            0.0
        } else {
            self.feasible_evaluations as f64 / self.evaluations as f64
        }
    }
}

pub struct Solvers {
    pub theta: ThetaSolver,
    pub z: ZSolver,
}

pub struct Problem<'a> {
    pub space: &'a SearchSpace,
    pub backend: &'a mut dyn Backend,
    /// One threshold per constraint reported by the backend, or empty.
    pub epsilons: Vec<f64>,
    pub mode: Mode,
}

enum Flow {
    Continue,
    Stop,
}

fn classify(e: SolverError) -> Result<Flow, RunError> {
    match e {
        SolverError::Eval(EvalError::BudgetExhausted) => Ok(Flow::Stop),
        SolverError::Eval(e) => Err(RunError::Evaluator(e)),
        e => Err(RunError::Solver(e)),
    }
}

/// Runs the loop until the budget is spent or the iterates settle.
pub fn run(problem: Problem<'_>, solvers: &mut Solvers, config: &AdmmConfig) -> Result<RunResult, RunError> {
    let Problem { space, backend, epsilons, mode } = problem;
    if config.budget.max_evals == Some(0)
        || config.budget.max_seconds.is_some_and(|s| s <= 0.0)
        || (config.budget.max_evals.is_none() && config.budget.max_seconds.is_none())
    {
        return Err(RunError::BudgetZero);
    }
    if !(config.rho.is_finite() && config.rho > 0.0) {
        return Err(RunError::InvalidRho(config.rho));
    }
    for (index, &value) in epsilons.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(RunError::InvalidEpsilon { index, value });
        }
    }
    let m = backend.constraint_count();
    let constrained = mode == Mode::Constrained;
    if (constrained || !epsilons.is_empty()) && epsilons.len() != m {
        return Err(RunError::EpsilonCount { expected: m, got: epsilons.len() });
    }

    let mut rng = SolverRng::seed_from_u64(config.seed);
    // Slacks and multipliers exist only when constraints are enforced.
    let state_eps: Vec<f64> = if constrained { epsilons.clone() } else { Vec::new() };
    let mut state = if config.random_init {
        AdmmState::random(space, config.rho, &state_eps, &mut rng)
    } else {
        AdmmState::initial(space, config.rho, &state_eps)
    };
    let mut session = Session::new(space, backend, epsilons, constrained, config.budget);
    let mut iterations = Vec::new();
    let mut stall = 0usize;
    let mut stop = StopReason::BudgetExhausted;

    loop {
        let before = session.incumbent().map(|i| i.eval_index);
        match iterate(&mut session, &mut state, solvers, config, &mut rng, constrained) {
            Ok((Flow::Continue, summary)) => {
                let summary = summary.expect("completed iterations are summarized");
                debug!(
                    "iteration {} z={} residual={} incumbent={:?} evals={}",
                    summary.iter, summary.z, summary.residual, summary.incumbent_loss, summary.evaluations
                );
                let residual = summary.residual;
                iterations.push(summary);
                let after = session.incumbent().map(|i| i.eval_index);
                stall = if after == before { stall + 1 } else { 0 };
                if residual == 0.0 && stall >= config.stall_iterations {
                    stop = StopReason::Converged;
                    break;
                }
            }
            Ok((Flow::Stop, _)) => break,
            Err(e) => return Err(e),
        }
    }
    info!(
        "stopped ({stop:?}) after {} iterations and {} evaluations",
        iterations.len(),
        session.evaluations()
    );
    Ok(session.finish(state, iterations, stop))
}

fn iterate(
    session: &mut Session<'_>,
    state: &mut AdmmState,
    solvers: &mut Solvers,
    config: &AdmmConfig,
    rng: &mut SolverRng,
    constrained: bool,
) -> Result<(Flow, Option<IterationSummary>), RunError> {
    let space = session.space();
    let t = state.t;
    let active = space.active_indices(&state.z).expect("state holds a valid assignment");

    // Hyperparameter step on the active set.
    session.set_phase(t, Phase::Theta);
    let mut obj = ThetaObjective::new(session, state, &active, constrained);
    let warm = obj.warm_start();
    let theta_min = match solvers.theta.minimize(&mut obj, config.theta_budget, &warm, rng) {
        Ok(m) => m,
        Err(e) => return classify(e).map(|f| (f, None)),
    };
    let mut theta = obj.apply(&theta_min.x);
    let slacks = obj.slacks(&theta_min.x).to_vec();
    drop(obj);
    if constrained {
        state.u = slacks;
    }

    let inactive = space.inactive_indices(&state.z).expect("valid assignment");
    solve_inactive(state, &inactive.int, space, &mut theta);
    state.delta = delta_min(state, &theta, space);

    // Selection step at the new hyperparameters.
    session.set_phase(t, Phase::Z);
    let mut zobj = SelectionObjective {
        session: &mut *session,
        state,
        theta: &theta,
        counts: space.choice_counts(),
        constrained,
    };
    let z_min: ZMinimum = match solvers.z.minimize(&mut zobj, config.z_budget, rng) {
        Ok(m) => m,
        Err(e) => return classify(e).map(|f| (f, None)),
    };
    state.z = z_min.z.clone();

    let residual = update_lambda(state, &theta);
    state.theta = theta;

    if constrained {
        session.set_phase(t, Phase::Multiplier);
        match session.surrogate_eval(&state.z, &state.theta, None) {
            Ok((_, g)) => update_mu(state, &g),
            Err(EvalError::BudgetExhausted) => return Ok((Flow::Stop, None)),
            Err(e) => return Err(RunError::Evaluator(e)),
        }
    }
    state.t += 1;

    Ok((
        Flow::Continue,
        Some(IterationSummary {
            iter: t,
            z: state.z.clone(),
            residual,
            theta_value: theta_min.value,
            z_value: z_min.value,
            evaluations: session.evaluations(),
            incumbent_loss: session.incumbent().map(|i| i.loss),
        }),
    ))
}

/// Moves each relaxed integer to the point of its rounding cell closest to
/// `b`. The rounded value, and hence the black-box loss, is unchanged while
/// the consensus penalty can only drop.
fn snap_to_cell(v: f64, b: f64, lo: i64, hi: i64) -> f64 {
    let cell = project_and_round(v, lo, hi);
    let lower = (cell as f64 - 0.5).max(lo as f64);
    let upper = (cell as f64 + 0.5).min(hi as f64);
    let mut s = b.clamp(lower, upper);
    if project_and_round(s, lo, hi) != cell {
        s += (cell as f64 - s).signum() * 1e-9;
    }
    if project_and_round(s, lo, hi) == cell && (s - b).abs() <= (v - b).abs() {
        s
    } else {
        v
    }
}

/// Hyperparameter sub-problem objective over
/// `[active continuous | active relaxed integers | slacks]`.
struct ThetaObjective<'s, 'a> {
    session: &'s mut Session<'a>,
    state: &'s AdmmState,
    active: &'s ActiveSet,
    constrained: bool,
    bounds: Vec<(f64, f64)>,
    int_bounds: Vec<(i64, i64)>,
}

impl<'s, 'a> ThetaObjective<'s, 'a> {
    fn new(session: &'s mut Session<'a>, state: &'s AdmmState, active: &'s ActiveSet, constrained: bool) -> Self {
        let space = session.space();
        let mut bounds: Vec<(f64, f64)> = active
            .cont
            .iter()
            .map(|&i| (space.cont_slots()[i].lower, space.cont_slots()[i].upper))
            .collect();
        let int_bounds: Vec<(i64, i64)> = active.int.iter().map(|&i| space.int_bounds()[i]).collect();
        bounds.extend(int_bounds.iter().map(|&(lo, hi)| (lo as f64, hi as f64)));
        if constrained {
            bounds.extend(state.epsilons.iter().map(|&e| (0.0, e)));
        }
        Self { session, state, active, constrained, bounds, int_bounds }
    }

    fn n_cont(&self) -> usize {
        self.active.cont.len()
    }

    fn n_int(&self) -> usize {
        self.active.int.len()
    }

    fn relaxed<'x>(&self, x: &'x [f64]) -> &'x [f64] {
        &x[self.n_cont()..self.n_cont() + self.n_int()]
    }

    fn slacks<'x>(&self, x: &'x [f64]) -> &'x [f64] {
        &x[self.n_cont() + self.n_int()..]
    }

    /// Full parameter vector with the active coordinates taken from `x`.
    fn apply(&self, x: &[f64]) -> ThetaVector {
        let mut theta = self.state.theta.clone();
        for (k, &i) in self.active.cont.iter().enumerate() {
            theta.cont[i] = x[k];
        }
        for (k, &i) in self.active.int.iter().enumerate() {
            theta.relaxed_int[i] = x[self.n_cont() + k];
        }
        theta
    }

    fn current_point(&self) -> Vec<f64> {
        let mut x: Vec<f64> = self.active.cont.iter().map(|&i| self.state.theta.cont[i]).collect();
        x.extend(self.active.int.iter().map(|&i| self.state.theta.relaxed_int[i]));
        if self.constrained {
            x.extend(&self.state.u);
        }
        x
    }

    fn value(&self, x: &[f64], loss: f64, g: &[f64]) -> f64 {
        let mut v = loss + theta_penalty_at(&self.active.int, self.relaxed(x), self.state);
        if self.constrained {
            v += constraint_penalty_with(g, self.slacks(x), self.state);
        }
        v
    }

    /// The current iterate as the first seed, plus every earlier evaluation
    /// of this algorithm selection re-scored under the current multipliers.
    fn warm_start(&self) -> WarmStart {
        let history = self
            .session
            .history(&self.state.z)
            .iter()
            .filter(|p| p.x.len() == self.bounds.len())
            .map(|p| {
                let mut x = p.x.clone();
                self.repair(&mut x);
                let value = self.value(&x, p.loss, &p.constraints);
                Observation { x, value }
            })
            .collect();
        WarmStart { seeds: vec![self.current_point()], history }
    }
}

impl BoxObjective for ThetaObjective<'_, '_> {
    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn repair(&self, x: &mut [f64]) {
        let n_cont = self.n_cont();
        for (k, &i) in self.active.int.iter().enumerate() {
            let (lo, hi) = self.int_bounds[k];
            x[n_cont + k] = snap_to_cell(x[n_cont + k], self.state.b(i), lo, hi);
        }
    }

    fn known_term(&self, x: &[f64]) -> f64 {
        theta_penalty_at(&self.active.int, self.relaxed(x), self.state)
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        let mut x = x.to_vec();
        let mut moved = false;
        for (v, &(lo, hi)) in x.iter_mut().zip(&self.bounds) {
            let p = v.clamp(lo, hi);
            moved |= p != *v;
            *v = p;
        }
        if moved {
            log::warn!("solver proposal outside the box was projected back");
        }
        let theta = self.apply(&x);
        let (loss, g) = self.session.surrogate_eval(&self.state.z, &theta, Some(self.slacks(&x)))?;
        Ok(self.value(&x, loss, &g))
    }
}

/// Selection sub-problem objective at fixed hyperparameters and slacks.
struct SelectionObjective<'s, 'a> {
    session: &'s mut Session<'a>,
    state: &'s AdmmState,
    theta: &'s ThetaVector,
    counts: Vec<usize>,
    constrained: bool,
}

impl SelectionObjective<'_, '_> {
    fn value(&self, loss: f64, g: &[f64]) -> f64 {
        if self.constrained {
            loss + constraint_penalty(g, self.state)
        } else {
            loss
        }
    }
}

impl ZObjective for SelectionObjective<'_, '_> {
    fn choice_counts(&self) -> &[usize] {
        &self.counts
    }

    fn evaluate(&mut self, z: &ZAssignment) -> Result<f64, EvalError> {
        let slacks = Some(self.state.u.as_slice());
        let (loss, g) = self.session.surrogate_eval(z, self.theta, slacks)?;
        Ok(self.value(loss, &g))
    }

    fn evaluate_batch(&mut self, zs: &[ZAssignment]) -> Result<Vec<f64>, EvalError> {
        let slacks = Some(self.state.u.as_slice());
        let outcomes = self.session.surrogate_eval_batch(zs, self.theta, slacks)?;
        Ok(outcomes.iter().map(|(loss, g)| self.value(*loss, g)).collect())
    }
}

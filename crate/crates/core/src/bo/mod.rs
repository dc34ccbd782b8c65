//! Continuous solvers for the hyperparameter sub-problem: Gaussian-process
//! Bayesian optimization with expected improvement, and a random-search
//! baseline.
//!
//! The BO solver maps the search box to the unit hypercube, standardizes the
//! observed values, fits an ARD Matérn 5/2 GP by marginal likelihood, and
//! queries the EI maximizer. Coordinates with zero width are held fixed and
//! left out of the model.

mod acquisition;
mod boxmin;
mod gp;
mod kernel;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::solver::{BoxObjective, Minimum, Observation, SolverError, SolverRng, WarmStart};

pub use acquisition::{ei_at, expected_improvement, propose_next, propose_next_composite, Proposal};
pub use gp::{GpModel, HyperBounds, NOISE_FLOOR};
pub use kernel::Matern52;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{x} inputs but {y} targets")]
    DataLength { x: usize, y: usize },
    #[error("model has no training data")]
    Unfitted,
    #[error("need at least 2 training points to fit hyperparameters, got {0}")]
    TooFewPoints(usize),
    #[error("covariance matrix not positive definite even after raising the noise")]
    NotPositiveDefinite,
}

/// Stratified design in the unit hypercube: each dimension's `n` strata are
/// used exactly once, in an independent random order per dimension.
pub fn latin_hypercube<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        perm.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            p[d] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

/// Shared bookkeeping for a single solve: projection into the box, repair,
/// call counting and best-point tracking.
struct Run<'a> {
    objective: &'a mut dyn BoxObjective,
    bounds: Vec<(f64, f64)>,
    budget: usize,
    calls: usize,
    observations: Vec<Observation>,
}

impl<'a> Run<'a> {
    fn new(objective: &'a mut dyn BoxObjective, budget: usize, warm: &WarmStart, keep: usize) -> Self {
        let bounds = objective.bounds().to_vec();
        let mut history: Vec<Observation> = warm
            .history
            .iter()
            .filter(|o| {
                o.value.is_finite()
                    && o.x.len() == bounds.len()
                    && o.x.iter().zip(&bounds).all(|(v, b)| *v >= b.0 && *v <= b.1)
            })
            .cloned()
            .collect();
        history.sort_by(|a, b| a.value.total_cmp(&b.value));
        history.truncate(keep);
        Self { objective, bounds, budget, calls: 0, observations: history }
    }

    fn exhausted(&self) -> bool {
        self.calls >= self.budget
    }

    fn evaluate(&mut self, mut x: Vec<f64>) -> Result<(), SolverError> {
        for (v, b) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(b.0, b.1);
        }
        self.objective.repair(&mut x);
        for (v, b) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(b.0, b.1);
        }
        self.calls += 1;
        let value = self.objective.evaluate(&x)?;
        self.observations.push(Observation { x, value });
        Ok(())
    }

    fn random_point(&self, rng: &mut SolverRng) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect()
    }

    fn finish(self, degenerate: usize) -> Minimum {
        let best = self
            .observations
            .iter()
            .min_by(|a, b| a.value.total_cmp(&b.value))
            .cloned()
            .unwrap_or_else(|| Observation {
                x: self.bounds.iter().map(|b| 0.5 * (b.0 + b.1)).collect(),
                value: f64::INFINITY,
            });
        Minimum {
            x: best.x,
            value: best.value,
            evaluations: self.calls,
            degenerate_proposals: degenerate,
        }
    }
}

/// Uniform random search.
#[derive(Debug, Clone, Default)]
pub struct RandomSearch;

impl RandomSearch {
    pub fn minimize(
        &mut self,
        objective: &mut dyn BoxObjective,
        budget: usize,
        warm: &WarmStart,
        rng: &mut SolverRng,
    ) -> Result<Minimum, SolverError> {
        if budget < 1 {
            return Err(SolverError::BudgetTooSmall { min: 1, got: budget });
        }
        let mut run = Run::new(objective, budget, warm, usize::MAX);
        for s in &warm.seeds {
            if run.exhausted() {
                break;
            }
            run.evaluate(s.clone())?;
        }
        while !run.exhausted() {
            let x = run.random_point(rng);
            run.evaluate(x)?;
        }
        Ok(run.finish(0))
    }
}

/// GP-EI Bayesian optimization.
#[derive(Debug, Clone)]
pub struct BoSolver {
    /// Random starts for the acquisition maximizer (plus the incumbent).
    pub restarts: usize,
    /// Starts for marginal-likelihood fitting.
    pub fit_starts: usize,
    /// Refit hyperparameters after this many new points.
    pub refit_every: usize,
    /// Best prior observations kept when warm-starting.
    pub max_history: usize,
    last_fit: Option<(Matern52, f64)>,
}

impl Default for BoSolver {
    fn default() -> Self {
        Self { restarts: 8, fit_starts: 4, refit_every: 5, max_history: 40, last_fit: None }
    }
}

impl BoSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Minimizes `objective` with at most `budget` calls. Seeds from `warm`
    /// are evaluated first, then a Latin-hypercube design tops the known
    /// points up to `max(2, ceil(budget / 4))`, then EI proposals follow.
    pub fn minimize(
        &mut self,
        objective: &mut dyn BoxObjective,
        budget: usize,
        warm: &WarmStart,
        rng: &mut SolverRng,
    ) -> Result<Minimum, SolverError> {
        if budget < 2 {
            return Err(SolverError::BudgetTooSmall { min: 2, got: budget });
        }
        let mut run = Run::new(objective, budget, warm, self.max_history);
        let free: Vec<usize> = (0..run.bounds.len())
            .filter(|&i| run.bounds[i].1 > run.bounds[i].0)
            .collect();

        for s in &warm.seeds {
            if run.exhausted() {
                break;
            }
            run.evaluate(s.clone())?;
        }
        if free.is_empty() {
            if run.observations.is_empty() {
                let x = run.random_point(rng);
                run.evaluate(x)?;
            }
            return Ok(run.finish(0));
        }

        let n_design = 2.max(budget.div_ceil(4));
        let missing = n_design.saturating_sub(run.observations.len());
        let missing = missing.min(budget - run.calls);
        for u in latin_hypercube(missing, free.len(), rng) {
            let x = self.unit_to_box(&run.bounds, &free, &u);
            run.evaluate(x)?;
        }

        let mut model: Option<GpModel> = None;
        let mut since_fit = usize::MAX;
        let mut degenerate = 0;
        while !run.exhausted() {
            let (xs, ys, scale) = self.training_set(&run, &free);
            let refit = since_fit >= self.refit_every.max(1);
            let gp = self.fit_model(model.take(), xs, ys, free.len(), refit, rng)?;
            if refit {
                since_fit = 0;
            }
            let unit_box = vec![(0.0, 1.0); free.len()];
            let objective = &*run.objective;
            let known = |u: &[f64]| objective.known_term(&self.unit_to_box(&run.bounds, &free, u)) / scale;
            let p = propose_next_composite(&gp, &unit_box, self.restarts, &known, rng);
            if p.degenerate {
                degenerate += 1;
            }
            let x = self.unit_to_box(&run.bounds, &free, &p.x);
            run.evaluate(x)?;
            since_fit += 1;
            model = Some(gp);
        }
        Ok(run.finish(degenerate))
    }

    fn unit_to_box(&self, bounds: &[(f64, f64)], free: &[usize], u: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        for (k, &i) in free.iter().enumerate() {
            let (lo, hi) = bounds[i];
            x[i] = lo + u[k].clamp(0.0, 1.0) * (hi - lo);
        }
        x
    }

    /// Unit-cube inputs and standardized values of the unknown part of the
    /// objective, with the standardizing scale.
    fn training_set(&self, run: &Run<'_>, free: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
        let xs = run
            .observations
            .iter()
            .map(|o| {
                free.iter()
                    .map(|&i| {
                        let (lo, hi) = run.bounds[i];
                        ((o.x[i] - lo) / (hi - lo)).clamp(0.0, 1.0)
                    })
                    .collect()
            })
            .collect();
        let raw: Vec<f64> = run
            .observations
            .iter()
            .map(|o| o.value - run.objective.known_term(&o.x))
            .collect();
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if sd > 1e-12 { sd } else { 1.0 };
        (xs, raw.iter().map(|v| (v - mean) / scale).collect(), scale)
    }

    fn fit_model(
        &mut self,
        previous: Option<GpModel>,
        xs: Vec<Vec<f64>>,
        ys: Vec<f64>,
        dim: usize,
        refit: bool,
        rng: &mut SolverRng,
    ) -> Result<GpModel, SolverError> {
        let bounds = HyperBounds {
            amplitude: (0.05, 20.0),
            length_scale: (0.01, 20.0),
            noise: (NOISE_FLOOR, 1.0),
        };
        let (kernel, noise) = match previous {
            Some(m) => (m.kernel().clone(), m.noise()),
            None => match &self.last_fit {
                Some((k, n)) if k.dim() == dim => (k.clone(), *n),
                _ => (Matern52::new(1.0, vec![0.3; dim]), 1e-6),
            },
        };
        let mut gp = GpModel::new(kernel, noise).with_bounds(bounds);
        gp.set_data(xs, ys)?;
        if refit && gp.len() >= 2 {
            gp.fit_hyperparams(self.fit_starts, rng)?;
            self.last_fit = Some((gp.kernel().clone(), gp.noise()));
        }
        Ok(gp)
    }
}

/// The continuous solver plugged into the hyperparameter sub-problem.
#[derive(Debug, Clone)]
pub enum ThetaSolver {
    Random(RandomSearch),
    Bo(BoSolver),
}

impl ThetaSolver {
    pub fn minimize(
        &mut self,
        objective: &mut dyn BoxObjective,
        budget: usize,
        warm: &WarmStart,
        rng: &mut SolverRng,
    ) -> Result<Minimum, SolverError> {
        match self {
            ThetaSolver::Random(s) => s.minimize(objective, budget, warm, rng),
            ThetaSolver::Bo(s) => s.minimize(objective, budget, warm, rng),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ThetaSolver::Random(_) => "random",
            ThetaSolver::Bo(_) => "bo",
        }
    }
}

/// Standalone GP-EI minimization of `objective` with at most `budget` calls.
pub fn solve_theta_min(
    objective: &mut dyn BoxObjective,
    budget: usize,
    rng: &mut SolverRng,
) -> Result<Minimum, SolverError> {
    BoSolver::default().minimize(objective, budget, &WarmStart::default(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::FnObjective;
    use rand::SeedableRng;

    #[test]
    fn latin_hypercube_uses_every_stratum() {
        let mut rng = SolverRng::seed_from_u64(0);
        let pts = latin_hypercube(7, 3, &mut rng);
        for d in 0..3 {
            let mut strata: Vec<usize> = pts.iter().map(|p| (p[d] * 7.0) as usize).collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn budget_below_two_is_rejected() {
        let mut obj = FnObjective::new(vec![(0.0, 1.0)], |x: &[f64]| x[0]);
        let mut rng = SolverRng::seed_from_u64(0);
        assert!(matches!(
            solve_theta_min(&mut obj, 1, &mut rng),
            Err(SolverError::BudgetTooSmall { min: 2, got: 1 })
        ));
    }

    #[test]
    fn budget_two_returns_better_design_point() {
        let mut seen = Vec::new();
        let mut obj = FnObjective::new(vec![(0.0, 1.0); 2], |x: &[f64]| {
            let v = x[0] + x[1];
            seen.push(v);
            v
        });
        let mut rng = SolverRng::seed_from_u64(4);
        let m = solve_theta_min(&mut obj, 2, &mut rng).unwrap();
        assert_eq!(m.evaluations, 2);
        drop(obj);
        assert_eq!(seen.len(), 2);
        assert_eq!(m.value, seen[0].min(seen[1]));
    }

    #[test]
    fn constant_objective() {
        let mut obj = FnObjective::new(vec![(-1.0, 2.0); 3], |_: &[f64]| 0.25);
        let mut rng = SolverRng::seed_from_u64(1);
        let m = solve_theta_min(&mut obj, 12, &mut rng).unwrap();
        assert_eq!(m.value, 0.25);
        assert!(m.x.iter().all(|v| (-1.0..=2.0).contains(v)));
        assert_eq!(m.evaluations, 12);
    }

    #[test]
    fn never_exceeds_budget_and_improves_on_sphere() {
        let mut calls = 0;
        let mut obj = FnObjective::new(vec![(0.0, 1.0); 2], |x: &[f64]| {
            calls += 1;
            (x[0] - 0.3).powi(2) + (x[1] - 0.6).powi(2)
        });
        let mut rng = SolverRng::seed_from_u64(7);
        let m = solve_theta_min(&mut obj, 20, &mut rng).unwrap();
        drop(obj);
        assert_eq!(calls, 20);
        assert!(m.value < 1e-2, "best {}", m.value);
    }

    #[test]
    fn fixed_coordinates_are_held() {
        let mut obj = FnObjective::new(vec![(0.0, 1.0), (0.4, 0.4)], |x: &[f64]| {
            assert_eq!(x[1], 0.4);
            (x[0] - 0.5).powi(2)
        });
        let mut rng = SolverRng::seed_from_u64(2);
        let m = solve_theta_min(&mut obj, 8, &mut rng).unwrap();
        assert_eq!(m.x[1], 0.4);
    }

    #[test]
    fn warm_history_counts_toward_design_and_result() {
        let mut calls = 0;
        let mut obj = FnObjective::new(vec![(0.0, 1.0)], |x: &[f64]| {
            calls += 1;
            (x[0] - 0.2).powi(2)
        });
        let warm = WarmStart {
            seeds: vec![],
            history: vec![
                Observation { x: vec![0.2], value: 0.0 },
                Observation { x: vec![0.9], value: 0.49 },
            ],
        };
        let mut rng = SolverRng::seed_from_u64(2);
        let m = BoSolver::default().minimize(&mut obj, 4, &warm, &mut rng).unwrap();
        drop(obj);
        assert_eq!(calls, 4);
        assert_eq!(m.evaluations, 4);
        assert!(m.value <= 0.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let run = |seed| {
            let mut obj = FnObjective::new(vec![(0.0, 1.0); 3], |x: &[f64]| {
                x.iter().map(|v| (v - 0.4).powi(2)).sum()
            });
            let mut rng = SolverRng::seed_from_u64(seed);
            solve_theta_min(&mut obj, 14, &mut rng).unwrap()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn random_search_evaluates_seeds_first() {
        let mut first = None;
        let mut obj = FnObjective::new(vec![(0.0, 1.0)], |x: &[f64]| {
            first.get_or_insert(x[0]);
            x[0]
        });
        let warm = WarmStart { seeds: vec![vec![0.123]], history: vec![] };
        let mut rng = SolverRng::seed_from_u64(0);
        let m = RandomSearch.minimize(&mut obj, 5, &warm, &mut rng).unwrap();
        drop(obj);
        assert_eq!(first, Some(0.123));
        assert_eq!(m.evaluations, 5);
    }
}

//! Solvers for the algorithm-selection sub-problem: exhaustive enumeration,
//! uniform random search, and Thompson sampling over a combinatorial bandit
//! with one arm per (module, algorithm) pair.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::eval::EvalError;
use crate::solver::{SolverError, SolverRng};
use crate::space::ZAssignment;

pub const DEFAULT_PRIOR: f64 = 10.0;
pub const DEFAULT_F_HAT: f64 = 0.7;
pub const DEFAULT_EXHAUSTIVE_CAP: usize = 4096;

/// A black-box objective over algorithm selections.
pub trait ZObjective {
    /// Algorithms per module.
    fn choice_counts(&self) -> &[usize];

    fn evaluate(&mut self, z: &ZAssignment) -> Result<f64, EvalError>;

    fn evaluate_batch(&mut self, zs: &[ZAssignment]) -> Result<Vec<f64>, EvalError> {
        zs.iter().map(|z| self.evaluate(z)).collect()
    }
}

/// Closure-backed selection objective.
pub struct FnZObjective<F> {
    counts: Vec<usize>,
    f: F,
}

impl<F: FnMut(&ZAssignment) -> f64> FnZObjective<F> {
    pub fn new(counts: Vec<usize>, f: F) -> Self {
        Self { counts, f }
    }
}

impl<F: FnMut(&ZAssignment) -> f64> ZObjective for FnZObjective<F> {
    fn choice_counts(&self) -> &[usize] {
        &self.counts
    }

    fn evaluate(&mut self, z: &ZAssignment) -> Result<f64, EvalError> {
        Ok((self.f)(z))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZMinimum {
    pub z: ZAssignment,
    pub value: f64,
    pub evaluations: usize,
}

/// Clipped probabilistic reward `1 - min(max(loss / f_hat, 0), 1)`.
pub fn reward_from_loss(loss: f64, f_hat: f64) -> f64 {
    let r = 1.0 - (loss / f_hat).clamp(0.0, 1.0);
    if r.is_nan() {
        0.0
    } else {
        r
    }
}

/// Per-module argmax of `omega`, which is laid out module by module. Ties go
/// to the lowest index.
pub fn select_arms(omega: &[f64], counts: &[usize]) -> Result<ZAssignment, SolverError> {
    let mut choice = Vec::with_capacity(counts.len());
    let mut offset = 0;
    for &k in counts {
        if k == 0 {
            return Err(SolverError::EmptyModule);
        }
        let mut best = 0;
        for j in 1..k {
            if omega[offset + j] > omega[offset + best] {
                best = j;
            }
        }
        choice.push(best);
        offset += k;
    }
    Ok(ZAssignment(choice))
}

/// Beta-Bernoulli posterior over every arm.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    pub alpha0: f64,
    pub delta0: f64,
    pub f_hat: f64,
    counts: Vec<usize>,
    offsets: Vec<usize>,
    pulls: Vec<u64>,
    rewards: Vec<u64>,
}

impl BanditState {
    pub fn new(counts: &[usize], alpha0: f64, delta0: f64, f_hat: f64) -> Result<Self, SolverError> {
        if counts.contains(&0) {
            return Err(SolverError::EmptyModule);
        }
        let mut offsets = Vec::with_capacity(counts.len());
        let mut total = 0;
        for &k in counts {
            offsets.push(total);
            total += k;
        }
        Ok(Self {
            alpha0,
            delta0,
            f_hat,
            counts: counts.to_vec(),
            offsets,
            pulls: vec![0; total],
            rewards: vec![0; total],
        })
    }

    pub fn with_defaults(counts: &[usize]) -> Result<Self, SolverError> {
        Self::new(counts, DEFAULT_PRIOR, DEFAULT_PRIOR, DEFAULT_F_HAT)
    }

    pub fn num_arms(&self) -> usize {
        self.pulls.len()
    }

    pub fn choice_counts(&self) -> &[usize] {
        &self.counts
    }

    /// Flat arm index of algorithm `algorithm` in module `module`.
    pub fn arm(&self, module: usize, algorithm: usize) -> usize {
        self.offsets[module] + algorithm
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn rewards(&self) -> &[u64] {
        &self.rewards
    }

    /// Posterior parameters `(alpha, delta)` of one arm.
    pub fn posterior(&self, arm: usize) -> (f64, f64) {
        let r = self.rewards[arm] as f64;
        let n = self.pulls[arm] as f64;
        (self.alpha0 + r, self.delta0 + n - r)
    }

    pub fn posterior_mean(&self, arm: usize) -> f64 {
        let (a, d) = self.posterior(arm);
        a / (a + d)
    }

    pub fn sample_omega(&self, rng: &mut SolverRng) -> Vec<f64> {
        (0..self.num_arms())
            .map(|j| {
                let (a, d) = self.posterior(j);
                Beta::new(a, d).map(|b| b.sample(rng)).unwrap_or(a / (a + d))
            })
            .collect()
    }

    /// Bookkeeping half of a round: the loss observed for `z` is turned into
    /// a reward probability and compared against the uniform draw `u`; the N
    /// selected arms are credited.
    pub fn record(&mut self, z: &ZAssignment, loss: f64, u: f64) -> bool {
        let success = u < reward_from_loss(loss, self.f_hat);
        for (i, &c) in z.choices().iter().enumerate() {
            let arm = self.arm(i, c);
            self.pulls[arm] += 1;
            if success {
                self.rewards[arm] += 1;
            }
        }
        success
    }

    /// One Thompson-sampling round. On objective failure the state is left
    /// unchanged.
    pub fn round(
        &mut self,
        objective: &mut dyn ZObjective,
        rng: &mut SolverRng,
    ) -> Result<(ZAssignment, f64), SolverError> {
        let omega = self.sample_omega(rng);
        let z = select_arms(&omega, &self.counts)?;
        let loss = objective.evaluate(&z)?;
        let u: f64 = rng.random();
        self.record(&z, loss, u);
        Ok((z, loss))
    }
}

fn count_assignments(counts: &[usize]) -> usize {
    counts.iter().fold(1usize, |acc, &k| acc.saturating_mul(k))
}

fn keep_best(best: &mut Option<ZMinimum>, z: &ZAssignment, value: f64) {
    if best.as_ref().is_none_or(|b| value < b.value) {
        *best = Some(ZMinimum { z: z.clone(), value, evaluations: 0 });
    }
}

/// Every combination, in mixed-radix order with the first module most
/// significant.
pub fn enumerate_assignments(counts: &[usize]) -> Vec<ZAssignment> {
    let total = count_assignments(counts);
    (0..total)
        .map(|mut index| {
            let mut choice = vec![0; counts.len()];
            for i in (0..counts.len()).rev() {
                choice[i] = index % counts[i];
                index /= counts[i];
            }
            ZAssignment(choice)
        })
        .collect()
}

/// The selection solver plugged into the algorithm-selection sub-problem.
#[derive(Debug, Clone)]
pub enum ZSolver {
    /// Evaluates every combination; the budget is ignored.
    Exhaustive { cap: usize },
    Random,
    /// Thompson sampling; the posterior persists across calls.
    Cmab(BanditState),
}

impl ZSolver {
    pub fn name(&self) -> &'static str {
        match self {
            ZSolver::Exhaustive { .. } => "exhaustive",
            ZSolver::Random => "random",
            ZSolver::Cmab(_) => "cmab",
        }
    }

    pub fn minimize(
        &mut self,
        objective: &mut dyn ZObjective,
        budget: usize,
        rng: &mut SolverRng,
    ) -> Result<ZMinimum, SolverError> {
        let counts = objective.choice_counts().to_vec();
        if counts.contains(&0) {
            return Err(SolverError::EmptyModule);
        }
        let mut best = None;
        let evaluations = match self {
            ZSolver::Exhaustive { cap } => {
                let total = count_assignments(&counts);
                if total > *cap {
                    return Err(SolverError::ExhaustiveOverCap { combinations: total, cap: *cap });
                }
                let all = enumerate_assignments(&counts);
                let values = objective.evaluate_batch(&all)?;
                for (z, v) in all.iter().zip(values) {
                    keep_best(&mut best, z, v);
                }
                all.len()
            }
            ZSolver::Random => {
                if budget < 1 {
                    return Err(SolverError::BudgetTooSmall { min: 1, got: budget });
                }
                let draws: Vec<ZAssignment> = (0..budget)
                    .map(|_| ZAssignment(counts.iter().map(|&k| rng.random_range(0..k)).collect()))
                    .collect();
                let values = objective.evaluate_batch(&draws)?;
                for (z, v) in draws.iter().zip(values) {
                    keep_best(&mut best, z, v);
                }
                budget
            }
            ZSolver::Cmab(state) => {
                if budget < 1 {
                    return Err(SolverError::BudgetTooSmall { min: 1, got: budget });
                }
                for _ in 0..budget {
                    let (z, v) = state.round(objective, rng)?;
                    keep_best(&mut best, &z, v);
                }
                budget
            }
        };
        let mut best = best.expect("at least one evaluation");
        best.evaluations = evaluations;
        Ok(best)
    }
}

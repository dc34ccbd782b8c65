//! Interfaces shared by the sub-problem solvers.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bo::GpError;
use crate::eval::EvalError;

/// RNG used by every solver; seedable and portable across platforms.
pub type SolverRng = ChaCha8Rng;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("evaluation budget {got} below the minimum of {min}")]
    BudgetTooSmall { min: usize, got: usize },
    #[error("exhaustive search over {combinations} combinations exceeds the cap of {cap}")]
    ExhaustiveOverCap { combinations: usize, cap: usize },
    #[error("empty module in arm layout")]
    EmptyModule,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// A black-box objective over an axis-aligned box.
pub trait BoxObjective {
    fn bounds(&self) -> &[(f64, f64)];

    /// Replaces a proposal by an equivalent-or-better point before it is
    /// evaluated. The default leaves the proposal untouched.
    fn repair(&self, _x: &mut [f64]) {}

    /// Part of the objective that is known in closed form and already
    /// included in [`evaluate`](Self::evaluate). Model-based solvers may use
    /// it exactly instead of learning it.
    fn known_term(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError>;
}

/// Closure-backed objective, mostly for tests and standalone use.
pub struct FnObjective<F> {
    bounds: Vec<(f64, f64)>,
    f: F,
}

impl<F: FnMut(&[f64]) -> f64> FnObjective<F> {
    pub fn new(bounds: Vec<(f64, f64)>, f: F) -> Self {
        Self { bounds, f }
    }
}

impl<F: FnMut(&[f64]) -> f64> BoxObjective for FnObjective<F> {
    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        Ok((self.f)(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Prior knowledge handed to a continuous solver: points that must be tried
/// first, and already-known objective values that cost nothing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    pub seeds: Vec<Vec<f64>>,
    pub history: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective calls made by this solve.
    pub evaluations: usize,
    /// Acquisition maximizations that found no positive improvement and fell
    /// back to a random point.
    pub degenerate_proposals: usize,
}

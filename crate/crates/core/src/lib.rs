//! Joint algorithm selection and hyperparameter optimization by alternating
//! direction method of multipliers.
//!
//! A [`space::SearchSpace`] declares modules, their candidate algorithms and
//! each algorithm's continuous and integer hyperparameters. [`admm::run`]
//! splits the mixed problem into a continuous sub-problem (solved by
//! [`bo::ThetaSolver`]), a closed-form integer rounding step and a
//! combinatorial selection sub-problem (solved by [`bandit::ZSolver`]), and
//! optionally enforces black-box inequality constraints through slack
//! variables. Candidates are scored by an [`eval::Backend`]: a builtin
//! synthetic benchmark or an external process speaking line-delimited JSON.

pub mod admm;
pub mod bandit;
pub mod bo;
pub mod cli;
pub mod eval;
pub mod solver;
pub mod space;

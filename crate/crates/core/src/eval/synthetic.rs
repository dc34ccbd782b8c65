//! Built-in synthetic benchmarks with known optima.
//!
//! The `mixed` family mimics a three-stage ML pipeline (scaler, transformer,
//! estimator) with 2 x 3 x 4 = 24 algorithm combinations. The loss is
//!
//! ```text
//! loss = clip(base + sum_i offset[i][z_i] + sum_active w * ((v - v*) / (hi - lo))^2, 0, 1)
//! ```
//!
//! so every combination `z` has floor `base + sum offsets` and the unique
//! global optimum is the zero-offset combination with all of its active
//! parameters at their targets. The optimal combination has 5 continuous and
//! 3 integer active parameters.
//!
//! Constrained variants add one constraint:
//! - `mixed-latency`: a prediction-latency analog in microseconds that depends
//!   on the estimator; with threshold 5 it is satisfied by exactly 25% of the
//!   space under uniform sampling, and the unconstrained optimum violates it.
//! - `mixed-disparity`: a group-disparity analog driven by the polynomial
//!   degree of the transformer; the unconstrained optimum violates a
//!   threshold of 0.07.

use std::time::Duration;

use crate::space::{
    AlgorithmSpec, ContParam, IntParam, ModuleSpec, SearchSpace, SpaceDocument, ZAssignment,
};

use super::{Backend, CandidateConfig, EvalError, EvalReply, EvalRequest};

const BASE_LOSS: f64 = 0.05;
const WEIGHT: f64 = 0.1;
const NOMINAL_COST: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkConstraint {
    Latency,
    Disparity,
}

impl BenchmarkConstraint {
    /// Threshold at which the constraint is reported in docs and examples.
    pub fn default_threshold(self) -> f64 {
        match self {
            BenchmarkConstraint::Latency => 5.0,
            BenchmarkConstraint::Disparity => 0.07,
        }
    }
}

/// The known global optimum of a benchmark's (unconstrained) loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub z: ZAssignment,
    pub theta_cont: Vec<f64>,
    pub theta_int: Vec<i64>,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    name: String,
    space: SearchSpace,
    offsets: Vec<Vec<f64>>,
    cont_targets: Vec<f64>,
    int_targets: Vec<i64>,
    constraints: Vec<BenchmarkConstraint>,
}

struct Alg {
    name: &'static str,
    offset: f64,
    cont: &'static [(&'static str, f64, f64, f64)],
    int: &'static [(&'static str, i64, i64, i64)],
}

const SCALERS: &[Alg] = &[
    Alg { name: "none", offset: 0.10, cont: &[], int: &[] },
    Alg {
        name: "quantile",
        offset: 0.0,
        cont: &[("subsample", 0.0, 1.0, 0.35)],
        int: &[("n_quantiles", 1, 20, 12)],
    },
];

const TRANSFORMERS: &[Alg] = &[
    Alg { name: "none", offset: 0.12, cont: &[], int: &[] },
    Alg {
        name: "pca",
        offset: 0.09,
        cont: &[("whiten", 0.0, 1.0, 0.6)],
        int: &[("n_components", 1, 10, 4)],
    },
    Alg {
        name: "poly",
        offset: 0.0,
        cont: &[("interaction", 0.0, 1.0, 0.25)],
        int: &[("degree", 1, 6, 4)],
    },
];

const ESTIMATORS: &[Alg] = &[
    Alg { name: "gnb", offset: 0.20, cont: &[], int: &[] },
    Alg {
        name: "qda",
        offset: 0.14,
        cont: &[("reg_param", 0.0, 1.0, 0.1)],
        int: &[],
    },
    Alg {
        name: "gbm",
        offset: 0.0,
        cont: &[
            ("learning_rate", 0.0, 1.0, 0.3),
            ("subsample", 0.0, 1.0, 0.8),
            ("max_features", 0.0, 1.0, 0.7),
        ],
        int: &[("max_depth", 1, 10, 4)],
    },
    Alg {
        name: "knn",
        offset: 0.10,
        cont: &[],
        int: &[("n_neighbors", 1, 30, 7)],
    },
];

impl Benchmark {
    pub const NAMES: &'static [&'static str] = &["mixed", "mixed-latency", "mixed-disparity"];

    pub fn by_name(name: &str) -> Result<Self, EvalError> {
        let constraints = match name {
            "mixed" => vec![],
            "mixed-latency" => vec![BenchmarkConstraint::Latency],
            "mixed-disparity" => vec![BenchmarkConstraint::Disparity],
            _ => return Err(EvalError::UnknownBenchmark(name.to_string())),
        };
        Ok(Self::mixed(name, constraints))
    }

    fn mixed(name: &str, constraints: Vec<BenchmarkConstraint>) -> Self {
        let stages = [("scaler", SCALERS), ("transformer", TRANSFORMERS), ("estimator", ESTIMATORS)];
        let mut modules = Vec::new();
        let mut offsets = Vec::new();
        let mut cont_targets = Vec::new();
        let mut int_targets = Vec::new();
        for (module, algs) in stages {
            let mut specs = Vec::new();
            let mut module_offsets = Vec::new();
            for a in algs {
                specs.push(AlgorithmSpec {
                    name: a.name.into(),
                    cont_params: a
                        .cont
                        .iter()
                        .map(|&(n, lower, upper, _)| ContParam { name: n.into(), lower, upper })
                        .collect(),
                    int_params: a
                        .int
                        .iter()
                        .map(|&(n, lower, upper, _)| IntParam { name: n.into(), lower, upper })
                        .collect(),
                });
                module_offsets.push(a.offset);
                cont_targets.extend(a.cont.iter().map(|c| c.3));
                int_targets.extend(a.int.iter().map(|c| c.3));
            }
            modules.push(ModuleSpec { name: module.into(), algorithms: specs });
            offsets.push(module_offsets);
        }
        let space = SearchSpace::build(&SpaceDocument { modules })
            .expect("built-in benchmark space is valid");
        Self {
            name: name.to_string(),
            space,
            offsets,
            cont_targets,
            int_targets,
            constraints,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn constraints(&self) -> &[BenchmarkConstraint] {
        &self.constraints
    }

    pub fn optimum(&self) -> Optimum {
        let z = ZAssignment(
            self.offsets
                .iter()
                .map(|o| {
                    o.iter()
                        .enumerate()
                        .min_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(i, _)| i)
                        .unwrap_or(0)
                })
                .collect(),
        );
        Optimum {
            loss: self.loss(&z, &self.cont_targets, &self.int_targets),
            z,
            theta_cont: self.cont_targets.clone(),
            theta_int: self.int_targets.clone(),
        }
    }

    /// Deterministic loss of a candidate; only active parameters contribute.
    pub fn loss(&self, z: &ZAssignment, cont: &[f64], ints: &[i64]) -> f64 {
        let active = self
            .space
            .active_indices(z)
            .expect("assignment validated by caller");
        let mut loss = BASE_LOSS;
        for (module_offsets, &c) in self.offsets.iter().zip(z.choices()) {
            loss += module_offsets[c];
        }
        for &i in &active.cont {
            let s = &self.space.cont_slots()[i];
            let d = (cont[i] - self.cont_targets[i]) / (s.upper - s.lower);
            loss += WEIGHT * d * d;
        }
        for &i in &active.int {
            let s = &self.space.int_slots()[i];
            let width = (s.upper - s.lower).max(1.0);
            let d = (ints[i] - self.int_targets[i]) as f64 / width;
            loss += WEIGHT * d * d;
        }
        loss.clamp(0.0, 1.0)
    }

    pub fn constraint_values(&self, z: &ZAssignment, cont: &[f64], ints: &[i64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| match c {
                BenchmarkConstraint::Latency => self.latency(z, cont, ints),
                BenchmarkConstraint::Disparity => self.disparity(z, ints),
            })
            .collect()
    }

    fn param_value(&self, module: usize, alg: usize, name: &str, cont: &[f64]) -> f64 {
        let key = format!(
            "{}.{}.{}",
            self.space.modules()[module].name,
            self.space.algorithm_name(module, alg),
            name
        );
        let i = self
            .space
            .cont_slots()
            .iter()
            .position(|s| s.key == key)
            .expect("benchmark parameter exists");
        cont[i]
    }

    fn int_value(&self, module: usize, alg: usize, name: &str, ints: &[i64]) -> i64 {
        let key = format!(
            "{}.{}.{}",
            self.space.modules()[module].name,
            self.space.algorithm_name(module, alg),
            name
        );
        let i = self
            .space
            .int_slots()
            .iter()
            .position(|s| s.key == key)
            .expect("benchmark parameter exists");
        ints[i]
    }

    /// Latency analog in microseconds, determined by the estimator.
    fn latency(&self, z: &ZAssignment, cont: &[f64], ints: &[i64]) -> f64 {
        let est = z.choices()[2];
        match ESTIMATORS[est].name {
            "gnb" => 6.0,
            "qda" => 7.0,
            "gbm" => 2.0 + 6.0 * self.param_value(2, est, "max_features", cont),
            "knn" => {
                let k = self.int_value(2, est, "n_neighbors", ints);
                2.0 + 6.0 * (k - 1) as f64 / 29.0
            }
            _ => unreachable!(),
        }
    }

    /// Disparity analog, determined by the transformer.
    fn disparity(&self, z: &ZAssignment, ints: &[i64]) -> f64 {
        let tr = z.choices()[1];
        match TRANSFORMERS[tr].name {
            "none" => 0.04,
            "pca" => 0.05,
            "poly" => {
                let degree = self.int_value(1, tr, "degree", ints);
                0.03 + 0.02 * (degree - 1) as f64
            }
            _ => unreachable!(),
        }
    }
}

impl Backend for Benchmark {
    fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    fn evaluate(
        &mut self,
        _request: &EvalRequest,
        candidate: &CandidateConfig,
    ) -> Result<EvalReply, EvalError> {
        self.space
            .validate_assignment(&candidate.z)
            .map_err(|e| EvalError::InvalidCandidate(e.to_string()))?;
        if candidate.theta_cont.len() != self.space.cont_slots().len()
            || candidate.theta_int.len() != self.space.int_slots().len()
        {
            return Err(EvalError::InvalidCandidate("parameter vector length".into()));
        }
        Ok(EvalReply {
            loss: self.loss(&candidate.z, &candidate.theta_cont, &candidate.theta_int),
            constraints: self.constraint_values(
                &candidate.z,
                &candidate.theta_cont,
                &candidate.theta_int,
            ),
            wall_time: NOMINAL_COST,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_shape() {
        let b = Benchmark::by_name("mixed").unwrap();
        assert_eq!(b.space().num_combinations(), 24);
        let opt = b.optimum();
        let active = b.space().active_indices(&opt.z).unwrap();
        assert_eq!(active.cont.len(), 5);
        assert_eq!(active.int.len(), 3);
        assert_eq!(opt.z, ZAssignment(vec![1, 2, 2]));
        assert!((opt.loss - BASE_LOSS).abs() < 1e-15);
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(matches!(
            Benchmark::by_name("nope"),
            Err(EvalError::UnknownBenchmark(_))
        ));
    }

    #[test]
    fn loss_is_deterministic_and_bounded_below_by_offset() {
        let b = Benchmark::by_name("mixed").unwrap();
        let space = b.space();
        let mid = space.midpoint_theta();
        let ints = space.round_ints(&mid.relaxed_int);
        for z in space.all_assignments() {
            let l1 = b.loss(&z, &mid.cont, &ints);
            let l2 = b.loss(&z, &mid.cont, &ints);
            assert_eq!(l1.to_bits(), l2.to_bits());
            let floor = b.loss(&z, &b.cont_targets, &b.int_targets);
            assert!(l1 >= floor && floor >= b.optimum().loss);
        }
    }

    /// Grid oracle: the loss is a sum of independent per-parameter terms, so
    /// scanning every active parameter over a 1e-3 grid (continuous) or its
    /// full range (integer) for every combination finds the global minimum.
    #[test]
    fn grid_search_confirms_optimum() {
        let b = Benchmark::by_name("mixed").unwrap();
        let space = b.space();
        let mut best = (f64::INFINITY, ZAssignment(vec![]));
        for z in space.all_assignments() {
            let active = space.active_indices(&z).unwrap();
            let mut cont = b.cont_targets.clone();
            let mut ints = b.int_targets.clone();
            for &i in &active.cont {
                let s = &space.cont_slots()[i];
                let steps = ((s.upper - s.lower) / 1e-3).round() as usize;
                let (mut bv, mut bl) = (s.lower, f64::INFINITY);
                for k in 0..=steps {
                    cont[i] = s.lower + k as f64 * 1e-3;
                    let l = b.loss(&z, &cont, &ints);
                    if l < bl {
                        bl = l;
                        bv = cont[i];
                    }
                }
                cont[i] = bv;
            }
            for &i in &active.int {
                let (lo, hi) = space.int_bounds()[i];
                let (mut bv, mut bl) = (lo, f64::INFINITY);
                for v in lo..=hi {
                    ints[i] = v;
                    let l = b.loss(&z, &cont, &ints);
                    if l < bl {
                        bl = l;
                        bv = v;
                    }
                }
                ints[i] = bv;
            }
            let l = b.loss(&z, &cont, &ints);
            if l < best.0 {
                best = (l, z);
            }
        }
        // Fixture: optimum combination (quantile, poly, gbm) with loss 0.05.
        assert_eq!(best.1, ZAssignment(vec![1, 2, 2]));
        assert!((best.0 - 0.05).abs() < 1e-12);
        assert_eq!(best.1, b.optimum().z);
    }

    #[test]
    fn latency_feasible_on_a_quarter_of_the_space() {
        // Exact measure under uniform z, uniform continuous values, and
        // uniform integers: gbm is feasible iff max_features <= 0.5 and knn
        // iff n_neighbors <= 15.
        let b = Benchmark::by_name("mixed-latency").unwrap();
        let space = b.space();
        let eps = BenchmarkConstraint::Latency.default_threshold();
        let mut frac = 0.0;
        for est in 0..4 {
            let z = ZAssignment(vec![0, 0, est]);
            let mut cont = space.midpoint_theta().cont;
            let mut ints = space.round_ints(&space.midpoint_theta().relaxed_int);
            let p = match ESTIMATORS[est].name {
                "gbm" => {
                    let i = space
                        .cont_slots()
                        .iter()
                        .position(|s| s.key == "estimator.gbm.max_features")
                        .unwrap();
                    let n = 100_000;
                    (0..n)
                        .filter(|k| {
                            cont[i] = (*k as f64 + 0.5) / n as f64;
                            b.constraint_values(&z, &cont, &ints)[0] <= eps
                        })
                        .count() as f64
                        / n as f64
                }
                "knn" => {
                    let i = space
                        .int_slots()
                        .iter()
                        .position(|s| s.key == "estimator.knn.n_neighbors")
                        .unwrap();
                    (1..=30)
                        .filter(|&k| {
                            ints[i] = k;
                            b.constraint_values(&z, &cont, &ints)[0] <= eps
                        })
                        .count() as f64
                        / 30.0
                }
                _ => {
                    if b.constraint_values(&z, &cont, &ints)[0] <= eps {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            frac += p / 4.0;
        }
        assert!((frac - 0.25).abs() < 1e-9, "feasible fraction {frac}");

        let opt = b.optimum();
        let g = b.constraint_values(&opt.z, &opt.theta_cont, &opt.theta_int);
        assert!(g[0] > eps, "unconstrained optimum must violate the constraint");
    }

    #[test]
    fn disparity_optimum_is_infeasible_at_default_threshold() {
        let b = Benchmark::by_name("mixed-disparity").unwrap();
        let opt = b.optimum();
        let g = b.constraint_values(&opt.z, &opt.theta_cont, &opt.theta_int);
        assert!(g[0] > BenchmarkConstraint::Disparity.default_threshold());
    }
}

//! Black-box evaluation layer.
//!
//! A [`Backend`] turns a concrete candidate (one algorithm per module plus
//! integer-valued and continuous hyperparameters) into a loss and a vector of
//! constraint values. Backends know nothing about ADMM; the optimizer only
//! ever hands them rounded integers.

mod cache;
mod disparity;
mod subprocess;
mod synthetic;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{SearchSpace, ZAssignment};

pub use cache::{CacheKey, EvalCache, CACHE_QUANTUM};
pub use disparity::{group_disparity, DisparityError, GroupMetrics};
pub use subprocess::{SubprocessBackend, SubprocessConfig, SubprocessPool, PROTOCOL_VERSION};
pub use synthetic::{Benchmark, BenchmarkConstraint, Optimum};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation budget exhausted")]
    BudgetExhausted,
    #[error("evaluator reported an error: {0}")]
    Reported(String),
    #[error("evaluation timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {message} (line: {raw:?})")]
    Protocol { message: String, raw: String },
    #[error("evaluator process is down: {0}")]
    EvaluatorDown(String),
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EvalError {
    /// Failures that concern a single candidate; the run may continue with a
    /// penalized loss.
    pub fn is_candidate_failure(&self) -> bool {
        matches!(
            self,
            EvalError::Reported(_) | EvalError::Timeout(_) | EvalError::Protocol { .. }
        )
    }
}

/// A fully specified candidate over the whole layout: algorithm choice plus
/// every continuous value and every (already rounded) integer value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub z: ZAssignment,
    pub theta_cont: Vec<f64>,
    pub theta_int: Vec<i64>,
}

/// Wire form of a candidate: only the active parameters, keyed by qualified
/// name `module.algorithm.param`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub id: u64,
    pub z: BTreeMap<String, String>,
    pub theta_int: BTreeMap<String, i64>,
    pub theta_cont: BTreeMap<String, f64>,
}

impl EvalRequest {
    pub fn from_candidate(
        space: &SearchSpace,
        candidate: &CandidateConfig,
        id: u64,
    ) -> Result<Self, EvalError> {
        let active = space
            .active_indices(&candidate.z)
            .map_err(|e| EvalError::InvalidCandidate(e.to_string()))?;
        let z = space
            .modules()
            .iter()
            .zip(candidate.z.choices())
            .map(|(m, &c)| (m.name.clone(), m.algorithms[c].name.clone()))
            .collect();
        let theta_int = active
            .int
            .iter()
            .map(|&i| (space.int_slots()[i].key.clone(), candidate.theta_int[i]))
            .collect();
        let theta_cont = active
            .cont
            .iter()
            .map(|&i| (space.cont_slots()[i].key.clone(), candidate.theta_cont[i]))
            .collect();
        Ok(Self { id, z, theta_int, theta_cont })
    }
}

/// What a backend returns for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReply {
    pub loss: f64,
    pub constraints: Vec<f64>,
    pub wall_time: Duration,
}

/// A reply tagged with the identifier of the request that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub loss: f64,
    pub constraints: Vec<f64>,
    pub wall_time: Duration,
    pub candidate_id: u64,
}

pub trait Backend {
    /// Number of constraint values every reply carries.
    fn constraint_count(&self) -> usize;

    fn evaluate(
        &mut self,
        request: &EvalRequest,
        candidate: &CandidateConfig,
    ) -> Result<EvalReply, EvalError>;

    /// Evaluates a batch, returning results in request order. Backends that
    /// own several workers override this to run the batch concurrently.
    fn evaluate_batch(
        &mut self,
        batch: &[(EvalRequest, CandidateConfig)],
    ) -> Vec<Result<EvalReply, EvalError>> {
        batch.iter().map(|(r, c)| self.evaluate(r, c)).collect()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn constraint_count(&self) -> usize {
        (**self).constraint_count()
    }

    fn evaluate(
        &mut self,
        request: &EvalRequest,
        candidate: &CandidateConfig,
    ) -> Result<EvalReply, EvalError> {
        (**self).evaluate(request, candidate)
    }

    fn evaluate_batch(
        &mut self,
        batch: &[(EvalRequest, CandidateConfig)],
    ) -> Vec<Result<EvalReply, EvalError>> {
        (**self).evaluate_batch(batch)
    }
}

/// Serves a request from the cache, or invokes the backend and stores the
/// reply. Backend errors are passed through and never cached.
pub fn cached_evaluate<B: Backend + ?Sized>(
    backend: &mut B,
    cache: &mut EvalCache,
    key: &CacheKey,
    request: &EvalRequest,
    candidate: &CandidateConfig,
) -> Result<(EvalOutcome, bool), EvalError> {
    if let Some(reply) = cache.lookup(key) {
        return Ok((outcome(reply.clone(), request.id), true));
    }
    let reply = backend.evaluate(request, candidate)?;
    cache.store(key.clone(), reply.clone());
    Ok((outcome(reply, request.id), false))
}

fn outcome(reply: EvalReply, candidate_id: u64) -> EvalOutcome {
    EvalOutcome {
        loss: reply.loss,
        constraints: reply.constraints,
        wall_time: reply.wall_time,
        candidate_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{AlgorithmSpec, ContParam, IntParam, ModuleSpec, SpaceDocument};

    struct Counting {
        calls: usize,
    }

    impl Backend for Counting {
        fn constraint_count(&self) -> usize {
            0
        }

        fn evaluate(
            &mut self,
            request: &EvalRequest,
            _candidate: &CandidateConfig,
        ) -> Result<EvalReply, EvalError> {
            self.calls += 1;
            Ok(EvalReply {
                loss: request.theta_cont.values().sum(),
                constraints: vec![],
                wall_time: Duration::from_millis(1),
            })
        }
    }

    fn space() -> SearchSpace {
        SearchSpace::build(&SpaceDocument {
            modules: vec![ModuleSpec {
                name: "m".into(),
                algorithms: vec![
                    AlgorithmSpec {
                        name: "a".into(),
                        cont_params: vec![ContParam { name: "x".into(), lower: 0.0, upper: 1.0 }],
                        int_params: vec![IntParam { name: "k".into(), lower: 1, upper: 10 }],
                    },
                    AlgorithmSpec {
                        name: "b".into(),
                        cont_params: vec![ContParam { name: "y".into(), lower: 0.0, upper: 1.0 }],
                        int_params: vec![],
                    },
                ],
            }],
        })
        .unwrap()
    }

    fn run(backend: &mut Counting, cache: &mut EvalCache, x: f64) -> bool {
        let space = space();
        let cand = CandidateConfig {
            z: ZAssignment(vec![0]),
            theta_cont: vec![x, 0.5],
            theta_int: vec![3],
        };
        let req = EvalRequest::from_candidate(&space, &cand, 1).unwrap();
        let key = CacheKey::new(&space, &cand).unwrap();
        cached_evaluate(backend, cache, &key, &req, &cand).unwrap().1
    }

    #[test]
    fn request_carries_only_active_parameters() {
        let space = space();
        let cand = CandidateConfig {
            z: ZAssignment(vec![0]),
            theta_cont: vec![0.25, 0.75],
            theta_int: vec![4],
        };
        let req = EvalRequest::from_candidate(&space, &cand, 9).unwrap();
        assert_eq!(req.z["m"], "a");
        assert_eq!(req.theta_cont.len(), 1);
        assert_eq!(req.theta_cont["m.a.x"], 0.25);
        assert_eq!(req.theta_int["m.a.k"], 4);
        let json = serde_json::to_string(&req).unwrap();
        assert_eq!(
            json,
            r#"{"id":9,"z":{"m":"a"},"theta_int":{"m.a.k":4},"theta_cont":{"m.a.x":0.25}}"#
        );
    }

    #[test]
    fn identical_request_hits_cache() {
        let mut backend = Counting { calls: 0 };
        let mut cache = EvalCache::default();
        assert!(!run(&mut backend, &mut cache, 0.3));
        assert!(run(&mut backend, &mut cache, 0.3));
        assert_eq!(backend.calls, 1);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));
    }

    #[test]
    fn quantization_merges_tiny_differences_only() {
        let mut backend = Counting { calls: 0 };
        let mut cache = EvalCache::default();
        run(&mut backend, &mut cache, 0.3);
        run(&mut backend, &mut cache, 0.3 + 1e-12);
        assert_eq!(backend.calls, 1);
        run(&mut backend, &mut cache, 0.301);
        assert_eq!(backend.calls, 2);
    }

    #[test]
    fn backend_errors_are_not_cached() {
        struct Failing(usize);
        impl Backend for Failing {
            fn constraint_count(&self) -> usize {
                0
            }
            fn evaluate(
                &mut self,
                _: &EvalRequest,
                _: &CandidateConfig,
            ) -> Result<EvalReply, EvalError> {
                self.0 += 1;
                Err(EvalError::Reported("boom".into()))
            }
        }
        let space = space();
        let cand = CandidateConfig {
            z: ZAssignment(vec![1]),
            theta_cont: vec![0.0, 0.5],
            theta_int: vec![1],
        };
        let req = EvalRequest::from_candidate(&space, &cand, 1).unwrap();
        let key = CacheKey::new(&space, &cand).unwrap();
        let mut backend = Failing(0);
        let mut cache = EvalCache::default();
        assert!(cached_evaluate(&mut backend, &mut cache, &key, &req, &cand).is_err());
        assert!(cached_evaluate(&mut backend, &mut cache, &key, &req, &cand).is_err());
        assert_eq!(backend.0, 2);
        assert!(cache.is_empty());
    }
}

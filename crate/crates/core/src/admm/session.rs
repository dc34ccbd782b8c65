use std::collections::HashMap;

use log::warn;

use crate::eval::{Backend, CacheKey, CandidateConfig, EvalCache, EvalError, EvalReply, EvalRequest};
use crate::space::{SearchSpace, ThetaVector, ZAssignment};

use super::trace::{Incumbent, Phase, TraceRecord};
use super::{AdmmState, IterationSummary, RunResult, StopReason};

/// Limits on black-box evaluations. Time is the cumulative time reported by
/// the evaluator, so runs against builtin benchmarks stay reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_evals: Option<u64>,
    pub max_seconds: Option<f64>,
}

const HISTORY_CAP: usize = 1000;

/// An evaluated point of the hyperparameter sub-problem for one selection,
/// kept so later sub-problems over the same selection start informed.
#[derive(Debug, Clone)]
pub(crate) struct HistoryPoint {
    pub x: Vec<f64>,
    pub loss: f64,
    pub constraints: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Evaluated {
    loss: f64,
    constraints: Vec<f64>,
    failed: bool,
}

/// Everything that touches the black box during a run.
pub struct Session<'a> {
    space: &'a SearchSpace,
    backend: &'a mut dyn Backend,
    cache: EvalCache,
    epsilons: Vec<f64>,
    constrained: bool,
    budget: Budget,
    trace: Vec<TraceRecord>,
    wall_ms: f64,
    next_id: u64,
    worst_loss: Option<f64>,
    worst_constraints: Vec<f64>,
    incumbent: Option<Incumbent>,
    feasible: u64,
    failed: u64,
    iter: usize,
    phase: Phase,
    history: HashMap<Vec<usize>, Vec<HistoryPoint>>,
}

impl<'a> Session<'a> {
    pub fn new(
        space: &'a SearchSpace,
        backend: &'a mut dyn Backend,
        epsilons: Vec<f64>,
        constrained: bool,
        budget: Budget,
    ) -> Self {
        let m = backend.constraint_count();
        Self {
            space,
            backend,
            cache: EvalCache::default(),
            epsilons,
            constrained,
            budget,
            trace: Vec::new(),
            wall_ms: 0.0,
            next_id: 1,
            worst_loss: None,
            worst_constraints: vec![0.0; m],
            incumbent: None,
            feasible: 0,
            failed: 0,
            iter: 0,
            phase: Phase::Theta,
            history: HashMap::new(),
        }
    }

    pub fn space(&self) -> &'a SearchSpace {
        self.space
    }

    pub fn set_phase(&mut self, iter: usize, phase: Phase) {
        self.iter = iter;
        self.phase = phase;
    }

    pub fn evaluations(&self) -> u64 {
        self.trace.len() as u64
    }

    pub fn incumbent(&self) -> Option<&Incumbent> {
        self.incumbent.as_ref()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub(crate) fn history(&self, z: &ZAssignment) -> &[HistoryPoint] {
        self.history.get(z.choices()).map_or(&[], Vec::as_slice)
    }

    /// Loss and constraint values at `(z, theta)` with every relaxed integer
    /// rounded onto its range. When `slacks` is given the point is also
    /// remembered for later hyperparameter sub-problems over `z`.
    pub fn surrogate_eval(
        &mut self,
        z: &ZAssignment,
        theta: &ThetaVector,
        slacks: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>), EvalError> {
        let mut out = self.surrogate_eval_batch(std::slice::from_ref(z), theta, slacks)?;
        Ok(out.pop().expect("one result per candidate"))
    }

    /// Batched form: one shared `theta`, several selections.
    pub fn surrogate_eval_batch(
        &mut self,
        zs: &[ZAssignment],
        theta: &ThetaVector,
        slacks: Option<&[f64]>,
    ) -> Result<Vec<(f64, Vec<f64>)>, EvalError> {
        let ints = self.space.round_ints(&theta.relaxed_int);
        let candidates: Vec<CandidateConfig> = zs
            .iter()
            .map(|z| CandidateConfig { z: z.clone(), theta_cont: theta.cont.clone(), theta_int: ints.clone() })
            .collect();
        let results = self.evaluate_candidates(&candidates)?;
        if let Some(u) = slacks {
            for (z, r) in zs.iter().zip(&results) {
                if !r.failed {
                    self.remember(z, theta, u, r);
                }
            }
        }
        Ok(results.into_iter().map(|r| (r.loss, r.constraints)).collect())
    }

    fn remember(&mut self, z: &ZAssignment, theta: &ThetaVector, u: &[f64], r: &Evaluated) {
        let active = match self.space.active_indices(z) {
            Ok(a) => a,
            Err(_) => return,
        };
        let mut x: Vec<f64> = active.cont.iter().map(|&i| theta.cont[i]).collect();
        x.extend(active.int.iter().map(|&i| theta.relaxed_int[i]));
        x.extend(u);
        let points = self.history.entry(z.choices().to_vec()).or_default();
        if points.iter().any(|p| p.x == x) {
            return;
        }
        if points.len() >= HISTORY_CAP {
            points.remove(0);
        }
        points.push(HistoryPoint { x, loss: r.loss, constraints: r.constraints.clone() });
    }

    fn remaining_evals(&self) -> u64 {
        match self.budget.max_evals {
            Some(max) => max.saturating_sub(self.evaluations()),
            None => u64::MAX,
        }
    }

    fn out_of_time(&self) -> bool {
        self.budget.max_seconds.is_some_and(|s| self.wall_ms >= s * 1000.0)
    }

    fn evaluate_candidates(&mut self, candidates: &[CandidateConfig]) -> Result<Vec<Evaluated>, EvalError> {
        let mut keys = Vec::with_capacity(candidates.len());
        for c in candidates {
            keys.push(CacheKey::new(self.space, c).map_err(|e| EvalError::InvalidCandidate(e.to_string()))?);
        }
        let mut results: Vec<Option<Evaluated>> = vec![None; candidates.len()];
        let mut pending: Vec<usize> = Vec::new();
        let mut duplicates: Vec<(usize, usize)> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            if let Some(reply) = self.cache.lookup(key) {
                results[i] = Some(Evaluated {
                    loss: reply.loss,
                    constraints: reply.constraints.clone(),
                    failed: false,
                });
            } else if let Some(&first) = pending.iter().find(|&&p| keys[p] == *key) {
                duplicates.push((i, first));
            } else {
                pending.push(i);
            }
        }

        let mut exhausted = false;
        if !pending.is_empty() {
            let allowed = if self.out_of_time() {
                0
            } else {
                self.remaining_evals().min(pending.len() as u64) as usize
            };
            if allowed < pending.len() {
                exhausted = true;
                pending.truncate(allowed);
            }
            let batch: Vec<(EvalRequest, CandidateConfig)> = pending
                .iter()
                .map(|&i| {
                    let id = self.next_id;
                    self.next_id += 1;
                    EvalRequest::from_candidate(self.space, &candidates[i], id).map(|r| (r, candidates[i].clone()))
                })
                .collect::<Result<_, _>>()?;
            let replies = self.backend.evaluate_batch(&batch);
            for ((&i, (request, candidate)), reply) in pending.iter().zip(&batch).zip(replies) {
                let reply = match reply {
                    Err(e) if e.is_candidate_failure() => {
                        warn!("evaluation {} failed ({e}); retrying once", request.id);
                        self.add_failure_time(&e);
                        let id = self.next_id;
                        self.next_id += 1;
                        let retry = EvalRequest { id, ..request.clone() };
                        self.backend.evaluate(&retry, candidate)
                    }
                    other => other,
                };
                let evaluated = match reply {
                    Ok(reply) => self.accept(&keys[i], reply),
                    Err(e) if e.is_candidate_failure() => {
                        warn!("evaluation {} failed again ({e}); substituting the worst loss", request.id);
                        self.add_failure_time(&e);
                        self.substitute()
                    }
                    Err(e) => return Err(e),
                };
                self.record(request, candidate, &evaluated);
                results[i] = Some(evaluated);
            }
        }
        if exhausted {
            return Err(EvalError::BudgetExhausted);
        }
        for (i, first) in duplicates {
            results[i] = results[first].clone();
        }
        Ok(results.into_iter().map(|r| r.expect("every candidate resolved")).collect())
    }

    fn add_failure_time(&mut self, e: &EvalError) {
        if let EvalError::Timeout(d) = e {
            self.wall_ms += d.as_secs_f64() * 1000.0;
        }
    }

    fn accept(&mut self, key: &CacheKey, reply: EvalReply) -> Evaluated {
        self.wall_ms += reply.wall_time.as_secs_f64() * 1000.0;
        self.worst_loss = Some(self.worst_loss.map_or(reply.loss, |w| w.max(reply.loss)));
        for (w, &g) in self.worst_constraints.iter_mut().zip(&reply.constraints) {
            *w = w.max(g);
        }
        let evaluated = Evaluated { loss: reply.loss, constraints: reply.constraints.clone(), failed: false };
        self.cache.store(key.clone(), reply);
        evaluated
    }

    fn substitute(&mut self) -> Evaluated {
        Evaluated {
            loss: self.worst_loss.unwrap_or(0.0) + 1.0,
            constraints: self.worst_constraints.iter().map(|w| w + 1.0).collect(),
            failed: true,
        }
    }

    fn is_feasible(&self, constraints: &[f64]) -> bool {
        self.epsilons.is_empty() || constraints.iter().zip(&self.epsilons).all(|(g, e)| g <= e)
    }

    fn record(&mut self, request: &EvalRequest, candidate: &CandidateConfig, r: &Evaluated) {
        let feasible = !r.failed && self.is_feasible(&r.constraints);
        let eval_index = self.evaluations() + 1;
        if r.failed {
            self.failed += 1;
        } else {
            let improves = if self.constrained {
                Incumbent::improves(self.incumbent.as_ref(), r.loss, feasible)
            } else {
                self.incumbent.as_ref().is_none_or(|c| r.loss < c.loss)
            };
            if improves {
                self.incumbent = Some(Incumbent {
                    config: candidate.clone(),
                    loss: r.loss,
                    constraints: r.constraints.clone(),
                    feasible,
                    eval_index,
                    wall_ms: self.wall_ms,
                });
            }
        }
        if feasible {
            self.feasible += 1;
        }
        self.trace.push(TraceRecord {
            eval_index,
            wall_ms: self.wall_ms,
            admm_iter: self.iter,
            phase: self.phase,
            z: request.z.clone(),
            theta_int: request.theta_int.clone(),
            theta_cont: request.theta_cont.clone(),
            loss: r.loss,
            constraints: r.constraints.clone(),
            feasible,
            incumbent_loss: self.incumbent.as_ref().map(|i| i.loss),
            failed: r.failed,
        });
    }

    pub(crate) fn finish(self, state: AdmmState, iterations: Vec<IterationSummary>, stop: StopReason) -> RunResult {
        RunResult {
            evaluations: self.trace.len() as u64,
            incumbent: self.incumbent,
            trace: self.trace,
            iterations,
            stop,
            state,
            feasible_evaluations: self.feasible,
            failed_evaluations: self.failed,
            cache_hits: self.cache.hits(),
            cache_misses: self.cache.misses(),
            wall_ms: self.wall_ms,
        }
    }
}

use std::collections::HashMap;

use crate::space::{SearchSpace, SpaceError};

use super::{CandidateConfig, EvalReply};

/// Continuous values are quantized to this step before hashing.
pub const CACHE_QUANTUM: f64 = 1e-9;

/// Canonical identity of a candidate: the algorithm choice, the active
/// integer values and the active continuous values after quantization.
/// Inactive parameters do not influence the black box and are left out.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(space: &SearchSpace, candidate: &CandidateConfig) -> Result<Self, SpaceError> {
        let active = space.active_indices(&candidate.z)?;
        let mut key = String::new();
        for c in candidate.z.choices() {
            key.push_str(&c.to_string());
            key.push(',');
        }
        key.push('|');
        for &i in &active.int {
            key.push_str(&candidate.theta_int[i].to_string());
            key.push(',');
        }
        key.push('|');
        for &i in &active.cont {
            let q = (candidate.theta_cont[i] / CACHE_QUANTUM).round() as i64;
            key.push_str(&q.to_string());
            key.push(',');
        }
        Ok(Self(key))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// In-memory evaluation cache with hit/miss counters.
#[derive(Debug, Default, Clone)]
pub struct EvalCache {
    entries: HashMap<CacheKey, EvalReply>,
    hits: u64,
    misses: u64,
}

impl EvalCache {
    pub fn lookup(&mut self, key: &CacheKey) -> Option<&EvalReply> {
        match self.entries.get(key) {
            Some(r) => {
                self.hits += 1;
                Some(r)
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    /// Looks up without touching the counters.
    pub fn peek(&self, key: &CacheKey) -> Option<&EvalReply> {
        self.entries.get(key)
    }

    pub fn store(&mut self, key: CacheKey, reply: EvalReply) {
        self.entries.insert(key, reply);
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

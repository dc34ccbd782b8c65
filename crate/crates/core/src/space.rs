//! Mixed continuous/integer search space over pipeline modules.
//!
//! A space is an ordered list of modules, each offering a choice of
//! algorithms, and each algorithm owning its own continuous and integer
//! hyperparameters. All hyperparameters of all algorithms are laid out in two
//! flat vectors (continuous values and relaxed integer values) whose indexing
//! depends only on declaration order: modules first, then algorithms, with an
//! algorithm's parameters contiguous.
//!
//! Categorical hyperparameters are expected to be encoded as integer ranges
//! `[0, k-1]`, and conditional hyperparameters flattened into additional
//! algorithm choices. The ordinal encoding imposes an artificial order on the
//! categories.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContParam {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntParam {
    pub name: String,
    pub lower: i64,
    pub upper: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub name: String,
    #[serde(default)]
    pub cont_params: Vec<ContParam>,
    #[serde(default)]
    pub int_params: Vec<IntParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub name: String,
    pub algorithms: Vec<AlgorithmSpec>,
}

/// The config-file form of a search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceDocument {
    pub modules: Vec<ModuleSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {kind}")]
pub struct SpaceError {
    pub path: String,
    pub kind: SpaceErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceErrorKind {
    #[error("empty module list")]
    NoModules,
    #[error("module has no algorithms")]
    NoAlgorithms,
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("degenerate bound (lower == upper)")]
    DegenerateBound,
    #[error("inverted bound (lower > upper)")]
    InvertedBound,
    #[error("non-finite bound")]
    NonFiniteBound,
    #[error("assignment has {got} entries, space has {expected} modules")]
    AssignmentLength { expected: usize, got: usize },
    #[error("algorithm index {index} out of range for {count} algorithms")]
    AlgorithmIndex { index: usize, count: usize },
}

impl SpaceError {
    fn new(path: impl Into<String>, kind: SpaceErrorKind) -> Self {
        Self { path: path.into(), kind }
    }
}

/// One slot of the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub module: usize,
    pub algorithm: usize,
    /// Qualified name `module.algorithm.param`, unique over the space.
    pub key: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct AlgorithmSlots {
    cont: Range<usize>,
    int: Range<usize>,
}

/// Exactly one algorithm index per module (the one-hot selection `z`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ZAssignment(pub Vec<usize>);

impl ZAssignment {
    pub fn choices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ZAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Full hyperparameter vectors: continuous values and relaxed integer values
/// for every algorithm in the space, active or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub cont: Vec<f64>,
    pub relaxed_int: Vec<f64>,
}

/// Flat indices of the parameters owned by the selected algorithms.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActiveSet {
    pub cont: Vec<usize>,
    pub int: Vec<usize>,
}

/// A validated search space with its deterministic flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    modules: Vec<ModuleSpec>,
    cont_slots: Vec<ParamSlot>,
    int_slots: Vec<ParamSlot>,
    int_bounds: Vec<(i64, i64)>,
    slots: Vec<Vec<AlgorithmSlots>>,
}

impl SearchSpace {
    pub fn build(doc: &SpaceDocument) -> Result<Self, SpaceError> {
        if doc.modules.is_empty() {
            return Err(SpaceError::new("modules", SpaceErrorKind::NoModules));
        }
        let mut module_names = HashSet::new();
        let mut cont_slots = Vec::new();
        let mut int_slots = Vec::new();
        let mut int_bounds = Vec::new();
        let mut slots = Vec::with_capacity(doc.modules.len());

        for (mi, module) in doc.modules.iter().enumerate() {
            let mpath = format!("modules[{mi}]");
            if !module_names.insert(module.name.as_str()) {
                return Err(SpaceError::new(
                    mpath,
                    SpaceErrorKind::DuplicateName(module.name.clone()),
                ));
            }
            if module.algorithms.is_empty() {
                return Err(SpaceError::new(mpath, SpaceErrorKind::NoAlgorithms));
            }
            let mut alg_names = HashSet::new();
            let mut module_slots = Vec::with_capacity(module.algorithms.len());
            for (ai, alg) in module.algorithms.iter().enumerate() {
                let apath = format!("{mpath}.algorithms[{ai}]");
                if !alg_names.insert(alg.name.as_str()) {
                    return Err(SpaceError::new(
                        apath,
                        SpaceErrorKind::DuplicateName(alg.name.clone()),
                    ));
                }
                let mut param_names = HashSet::new();
                let cont_start = cont_slots.len();
                for (pi, p) in alg.cont_params.iter().enumerate() {
                    let ppath = format!("{apath}.cont_params[{pi}]");
                    if !param_names.insert(p.name.as_str()) {
                        return Err(SpaceError::new(
                            ppath,
                            SpaceErrorKind::DuplicateName(p.name.clone()),
                        ));
                    }
                    if !p.lower.is_finite() || !p.upper.is_finite() {
                        return Err(SpaceError::new(ppath, SpaceErrorKind::NonFiniteBound));
                    }
                    if p.lower == p.upper {
                        return Err(SpaceError::new(ppath, SpaceErrorKind::DegenerateBound));
                    }
                    if p.lower > p.upper {
                        return Err(SpaceError::new(ppath, SpaceErrorKind::InvertedBound));
                    }
                    cont_slots.push(ParamSlot {
                        module: mi,
                        algorithm: ai,
                        key: qualified(&module.name, &alg.name, &p.name),
                        lower: p.lower,
                        upper: p.upper,
                    });
                }
                let int_start = int_slots.len();
                for (pi, p) in alg.int_params.iter().enumerate() {
                    let ppath = format!("{apath}.int_params[{pi}]");
                    if !param_names.insert(p.name.as_str()) {
                        return Err(SpaceError::new(
                            ppath,
                            SpaceErrorKind::DuplicateName(p.name.clone()),
                        ));
                    }
                    if p.lower > p.upper {
                        return Err(SpaceError::new(ppath, SpaceErrorKind::InvertedBound));
                    }
                    int_slots.push(ParamSlot {
                        module: mi,
                        algorithm: ai,
                        key: qualified(&module.name, &alg.name, &p.name),
                        lower: p.lower as f64,
                        upper: p.upper as f64,
                    });
                    int_bounds.push((p.lower, p.upper));
                }
                module_slots.push(AlgorithmSlots {
                    cont: cont_start..cont_slots.len(),
                    int: int_start..int_slots.len(),
                });
            }
            slots.push(module_slots);
        }

        Ok(Self {
            modules: doc.modules.clone(),
            cont_slots,
            int_slots,
            int_bounds,
            slots,
        })
    }

    pub fn modules(&self) -> &[ModuleSpec] {
        &self.modules
    }

    pub fn document(&self) -> SpaceDocument {
        SpaceDocument { modules: self.modules.clone() }
    }

    /// Number of modules `N`.
    pub fn num_modules(&self) -> usize {
        self.modules.len()
    }

    /// Algorithm counts `K_i` per module.
    pub fn choice_counts(&self) -> Vec<usize> {
        self.modules.iter().map(|m| m.algorithms.len()).collect()
    }

    /// Number of distinct algorithm combinations, saturating on overflow.
    pub fn num_combinations(&self) -> usize {
        self.modules
            .iter()
            .fold(1usize, |acc, m| acc.saturating_mul(m.algorithms.len()))
    }

    pub fn cont_slots(&self) -> &[ParamSlot] {
        &self.cont_slots
    }

    pub fn int_slots(&self) -> &[ParamSlot] {
        &self.int_slots
    }

    pub fn int_bounds(&self) -> &[(i64, i64)] {
        &self.int_bounds
    }

    pub fn algorithm_name(&self, module: usize, algorithm: usize) -> &str {
        &self.modules[module].algorithms[algorithm].name
    }

    pub fn validate_assignment(&self, z: &ZAssignment) -> Result<(), SpaceError> {
        if z.len() != self.num_modules() {
            return Err(SpaceError::new(
                "z",
                SpaceErrorKind::AssignmentLength {
                    expected: self.num_modules(),
                    got: z.len(),
                },
            ));
        }
        for (i, (&c, m)) in z.0.iter().zip(&self.modules).enumerate() {
            if c >= m.algorithms.len() {
                return Err(SpaceError::new(
                    format!("z[{i}]"),
                    SpaceErrorKind::AlgorithmIndex {
                        index: c,
                        count: m.algorithms.len(),
                    },
                ));
            }
        }
        Ok(())
    }

    /// Flat indices of the parameters belonging to the selected algorithms.
    pub fn active_indices(&self, z: &ZAssignment) -> Result<ActiveSet, SpaceError> {
        self.validate_assignment(z)?;
        let mut active = ActiveSet::default();
        for (module_slots, &choice) in self.slots.iter().zip(&z.0) {
            let s = &module_slots[choice];
            active.cont.extend(s.cont.clone());
            active.int.extend(s.int.clone());
        }
        Ok(active)
    }

    /// Complement of [`SearchSpace::active_indices`].
    pub fn inactive_indices(&self, z: &ZAssignment) -> Result<ActiveSet, SpaceError> {
        let active = self.active_indices(z)?;
        Ok(ActiveSet {
            cont: complement(&active.cont, self.cont_slots.len()),
            int: complement(&active.int, self.int_slots.len()),
        })
    }

    /// The first algorithm of every module.
    pub fn first_assignment(&self) -> ZAssignment {
        ZAssignment(vec![0; self.num_modules()])
    }

    /// Decodes a mixed-radix combination index, first module most significant.
    pub fn assignment_from_index(&self, mut index: usize) -> ZAssignment {
        let counts = self.choice_counts();
        let mut choice = vec![0; counts.len()];
        for (c, &k) in choice.iter_mut().zip(&counts).rev() {
            *c = index % k;
            index /= k;
        }
        ZAssignment(choice)
    }

    pub fn all_assignments(&self) -> impl Iterator<Item = ZAssignment> + '_ {
        (0..self.num_combinations()).map(|i| self.assignment_from_index(i))
    }

    /// Box midpoints for every parameter.
    pub fn midpoint_theta(&self) -> ThetaVector {
        ThetaVector {
            cont: self.cont_slots.iter().map(|s| 0.5 * (s.lower + s.upper)).collect(),
            relaxed_int: self.int_slots.iter().map(|s| 0.5 * (s.lower + s.upper)).collect(),
        }
    }

    /// Rounds every relaxed integer coordinate onto its integer range.
    pub fn round_ints(&self, relaxed: &[f64]) -> Vec<i64> {
        relaxed
            .iter()
            .zip(&self.int_bounds)
            .map(|(&v, &(lo, hi))| project_and_round(v, lo, hi))
            .collect()
    }
}

fn qualified(module: &str, algorithm: &str, param: &str) -> String {
    format!("{module}.{algorithm}.{param}")
}

fn complement(sorted: &[usize], len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(len - sorted.len());
    let mut it = sorted.iter().peekable();
    for i in 0..len {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// Euclidean projection of a scalar onto `[lower, upper]`.
pub fn project_box(value: f64, lower: f64, upper: f64) -> f64 {
    debug_assert!(lower <= upper);
    value.max(lower).min(upper)
}

/// Projects onto `[lower, upper]` and rounds to the nearest integer, ties
/// away from zero.
pub fn project_and_round(value: f64, lower: i64, upper: i64) -> i64 {
    debug_assert!(lower <= upper);
    let clamped = project_box(value, lower as f64, upper as f64);
    (clamped.round() as i64).clamp(lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alg(name: &str, cont: &[(&str, f64, f64)], int: &[(&str, i64, i64)]) -> AlgorithmSpec {
        AlgorithmSpec {
            name: name.into(),
            cont_params: cont
                .iter()
                .map(|&(n, lower, upper)| ContParam { name: n.into(), lower, upper })
                .collect(),
            int_params: int
                .iter()
                .map(|&(n, lower, upper)| IntParam { name: n.into(), lower, upper })
                .collect(),
        }
    }

    fn module(name: &str, algs: Vec<AlgorithmSpec>) -> ModuleSpec {
        ModuleSpec { name: name.into(), algorithms: algs }
    }

    fn two_module_doc() -> SpaceDocument {
        SpaceDocument {
            modules: vec![
                module(
                    "a",
                    vec![
                        alg("a0", &[("x", 0.0, 1.0)], &[("k", 1, 5)]),
                        alg("a1", &[("x", 0.0, 1.0), ("y", -1.0, 1.0)], &[]),
                    ],
                ),
                module(
                    "b",
                    vec![
                        alg("b0", &[], &[]),
                        alg("b1", &[("c", 0.5, 2.0)], &[("n", 0, 3), ("m", 2, 8)]),
                        alg("b2", &[], &[("j", 0, 1)]),
                    ],
                ),
            ],
        }
    }

    #[test]
    fn builds_two_module_space() {
        let space = SearchSpace::build(&two_module_doc()).unwrap();
        assert_eq!(space.num_modules(), 2);
        assert_eq!(space.choice_counts(), vec![2, 3]);
        assert_eq!(space.num_combinations(), 6);
        assert_eq!(space.cont_slots().len(), 4);
        assert_eq!(space.int_slots().len(), 4);
        assert_eq!(space.cont_slots()[2].key, "a.a1.y");
    }

    #[test]
    fn rejects_degenerate_bound_with_path() {
        let mut doc = two_module_doc();
        doc.modules[1].algorithms[1].cont_params[0].upper = 0.5;
        let err = SearchSpace::build(&doc).unwrap_err();
        assert_eq!(err.kind, SpaceErrorKind::DegenerateBound);
        assert_eq!(err.path, "modules[1].algorithms[1].cont_params[0]");
        assert!(err.to_string().contains("degenerate bound"));
    }

    #[test]
    fn rejects_inverted_and_duplicate_and_empty() {
        let mut doc = two_module_doc();
        doc.modules[0].algorithms[0].int_params[0].lower = 9;
        assert_eq!(
            SearchSpace::build(&doc).unwrap_err().kind,
            SpaceErrorKind::InvertedBound
        );

        let mut doc = two_module_doc();
        doc.modules[1].name = "a".into();
        let err = SearchSpace::build(&doc).unwrap_err();
        assert_eq!(err.path, "modules[1]");
        assert!(matches!(err.kind, SpaceErrorKind::DuplicateName(_)));

        let mut doc = two_module_doc();
        doc.modules[1].algorithms[2].name = "b1".into();
        assert!(matches!(
            SearchSpace::build(&doc).unwrap_err().kind,
            SpaceErrorKind::DuplicateName(_)
        ));

        let doc = SpaceDocument { modules: vec![] };
        assert_eq!(
            SearchSpace::build(&doc).unwrap_err().kind,
            SpaceErrorKind::NoModules
        );

        let mut doc = two_module_doc();
        doc.modules[0].algorithms.clear();
        assert_eq!(
            SearchSpace::build(&doc).unwrap_err().kind,
            SpaceErrorKind::NoAlgorithms
        );
    }

    #[test]
    fn single_point_integer_range_is_allowed() {
        let mut doc = two_module_doc();
        doc.modules[0].algorithms[0].int_params[0] = IntParam { name: "k".into(), lower: 3, upper: 3 };
        assert!(SearchSpace::build(&doc).is_ok());
    }

    #[test]
    fn projections() {
        assert_eq!(project_box(9.4, 2.0, 8.0), 8.0);
        assert_eq!(project_box(3.2, 2.0, 8.0), 3.2);
        assert_eq!(project_box(-1.0, 0.0, 5.0), 0.0);
        assert_eq!(project_and_round(9.4, 2, 8), 8);
        assert_eq!(project_and_round(3.2, 2, 8), 3);
        assert_eq!(project_and_round(5.5, 2, 8), 6);
        assert_eq!(project_and_round(-2.5, -5, 5), -3);
    }

    #[test]
    fn tie_rounding_matches_brute_force_argmin() {
        // Among equidistant integers prefer the one farther from zero.
        let v = 5.5;
        let best = (2..=8)
            .min_by(|&a: &i64, &b: &i64| {
                let da = (a as f64 - v).abs();
                let db = (b as f64 - v).abs();
                da.partial_cmp(&db).unwrap().then(b.abs().cmp(&a.abs()))
            })
            .unwrap();
        assert_eq!(best, 6);
        assert_eq!(project_and_round(v, 2, 8), best);
    }

    #[test]
    fn active_indices_follow_layout() {
        let space = SearchSpace::build(&two_module_doc()).unwrap();
        let active = space.active_indices(&ZAssignment(vec![1, 0])).unwrap();
        assert_eq!(active.cont, vec![1, 2]);
        assert!(active.int.is_empty());

        let active = space.active_indices(&ZAssignment(vec![0, 1])).unwrap();
        // Oracle: enumerate the layout and keep slots whose owner is selected.
        let z = [0, 1];
        let want_cont: Vec<usize> = space
            .cont_slots()
            .iter()
            .enumerate()
            .filter(|(_, s)| z[s.module] == s.algorithm)
            .map(|(i, _)| i)
            .collect();
        let want_int: Vec<usize> = space
            .int_slots()
            .iter()
            .enumerate()
            .filter(|(_, s)| z[s.module] == s.algorithm)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(active.cont, want_cont);
        assert_eq!(active.int, want_int);
        assert_eq!(active.int, vec![0, 1, 2]);
    }

    #[test]
    fn parameterless_selection_has_empty_active_set() {
        let doc = SpaceDocument {
            modules: vec![
                module("a", vec![alg("none", &[], &[]), alg("p", &[("x", 0.0, 1.0)], &[])]),
                module("b", vec![alg("none", &[], &[])]),
            ],
        };
        let space = SearchSpace::build(&doc).unwrap();
        let active = space.active_indices(&ZAssignment(vec![0, 0])).unwrap();
        assert!(active.cont.is_empty() && active.int.is_empty());
    }

    #[test]
    fn wrong_assignment_length_is_rejected() {
        let space = SearchSpace::build(&two_module_doc()).unwrap();
        let err = space.active_indices(&ZAssignment(vec![0])).unwrap_err();
        assert_eq!(
            err.kind,
            SpaceErrorKind::AssignmentLength { expected: 2, got: 1 }
        );
        assert!(space.active_indices(&ZAssignment(vec![0, 3])).is_err());
    }

    #[test]
    fn active_and_inactive_partition_every_assignment() {
        let space = SearchSpace::build(&two_module_doc()).unwrap();
        for z in space.all_assignments() {
            let a = space.active_indices(&z).unwrap();
            let ia = space.inactive_indices(&z).unwrap();
            let mut cont: Vec<usize> = a.cont.iter().chain(&ia.cont).copied().collect();
            cont.sort_unstable();
            assert_eq!(cont, (0..space.cont_slots().len()).collect::<Vec<_>>());
            let mut int: Vec<usize> = a.int.iter().chain(&ia.int).copied().collect();
            int.sort_unstable();
            assert_eq!(int, (0..space.int_slots().len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn assignment_index_round_trips_through_enumeration() {
        let space = SearchSpace::build(&two_module_doc()).unwrap();
        let all: Vec<_> = space.all_assignments().collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], ZAssignment(vec![0, 0]));
        assert_eq!(all[5], ZAssignment(vec![1, 2]));
        let unique: HashSet<_> = all.iter().cloned().collect();
        assert_eq!(unique.len(), 6);
    }

    #[test]
    fn layout_is_deterministic() {
        let a = SearchSpace::build(&two_module_doc()).unwrap();
        let b = SearchSpace::build(&two_module_doc()).unwrap();
        assert_eq!(a, b);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn project_box_is_idempotent(v in -1e6f64..1e6, lo in -100f64..100.0, w in 0f64..50.0) {
                let hi = lo + w;
                let once = project_box(v, lo, hi);
                prop_assert_eq!(project_box(once, lo, hi), once);
                prop_assert!(once >= lo && once <= hi);
            }

            #[test]
            fn project_and_round_is_idempotent_and_optimal(
                v in -2000f64..2000.0, lo in -500i64..500, w in 0i64..1000
            ) {
                let hi = lo + w;
                let r = project_and_round(v, lo, hi);
                prop_assert_eq!(project_and_round(r as f64, lo, hi), r);
                let c = project_box(v, lo as f64, hi as f64);
                let best = (lo..=hi)
                    .map(|d| (d as f64 - c).abs())
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(((r as f64) - c).abs() <= best + 1e-12);
            }
        }
    }
}

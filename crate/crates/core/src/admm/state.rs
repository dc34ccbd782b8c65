use rand::Rng;

use crate::space::{project_and_round, project_box, SearchSpace, ThetaVector, ZAssignment};

/// Iterate of the alternating scheme: integer consensus copy `delta`, its
/// multipliers `lambda`, and for black-box constraints the multipliers `mu`
/// and slacks `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub t: usize,
    pub delta: Vec<i64>,
    pub lambda: Vec<f64>,
    pub rho: f64,
    pub mu: Vec<f64>,
    pub u: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub z: ZAssignment,
    pub theta: ThetaVector,
}

impl AdmmState {
    /// Midpoint start: every parameter at the centre of its box, the first
    /// algorithm of every module, zero multipliers and `u = epsilon / 2`.
    pub fn initial(space: &SearchSpace, rho: f64, epsilons: &[f64]) -> Self {
        let theta = space.midpoint_theta();
        Self::from_point(space, rho, epsilons, space.first_assignment(), theta)
    }

    /// Random start: uniform parameters and algorithms, zero multipliers.
    pub fn random<R: Rng>(space: &SearchSpace, rho: f64, epsilons: &[f64], rng: &mut R) -> Self {
        let cont = space
            .cont_slots()
            .iter()
            .map(|s| rng.random_range(s.lower..=s.upper))
            .collect();
        let relaxed_int = space
            .int_slots()
            .iter()
            .map(|s| rng.random_range(s.lower..=s.upper))
            .collect();
        let z = ZAssignment(space.choice_counts().iter().map(|&k| rng.random_range(0..k)).collect());
        Self::from_point(space, rho, epsilons, z, ThetaVector { cont, relaxed_int })
    }

    fn from_point(
        space: &SearchSpace,
        rho: f64,
        epsilons: &[f64],
        z: ZAssignment,
        theta: ThetaVector,
    ) -> Self {
        let delta = theta
            .relaxed_int
            .iter()
            .zip(space.int_bounds())
            .map(|(&v, &(lo, hi))| project_and_round(v, lo, hi))
            .collect();
        Self {
            t: 0,
            delta,
            lambda: vec![0.0; space.int_slots().len()],
            rho,
            mu: vec![0.0; epsilons.len()],
            u: epsilons.iter().map(|e| e / 2.0).collect(),
            epsilons: epsilons.to_vec(),
            z,
            theta,
        }
    }

    pub fn constraint_count(&self) -> usize {
        self.epsilons.len()
    }

    /// `b = delta - lambda / rho` for one integer coordinate.
    pub fn b(&self, i: usize) -> f64 {
        self.delta[i] as f64 - self.lambda[i] / self.rho
    }

    /// `max_i |relaxed_i - delta_i|`.
    pub fn residual(&self) -> f64 {
        self.theta
            .relaxed_int
            .iter()
            .zip(&self.delta)
            .fold(0.0f64, |m, (&v, &d)| m.max((v - d as f64).abs()))
    }
}

/// `(rho / 2) * ||relaxed - b||^2` with `b = delta - lambda / rho`.
pub fn theta_penalty(relaxed: &[f64], state: &AdmmState) -> f64 {
    let sum: f64 = relaxed
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - state.b(i)).powi(2))
        .sum();
    0.5 * state.rho * sum
}

/// The same penalty restricted to the listed coordinates, whose values are
/// given in list order.
pub(crate) fn theta_penalty_at(indices: &[usize], values: &[f64], state: &AdmmState) -> f64 {
    let sum: f64 = indices
        .iter()
        .zip(values)
        .map(|(&i, &v)| (v - state.b(i)).powi(2))
        .sum();
    0.5 * state.rho * sum
}

/// `(rho / 2) * sum_i (g_i + u_i - eps_i + mu_i / rho)^2` at the state's slacks.
pub fn constraint_penalty(gvals: &[f64], state: &AdmmState) -> f64 {
    constraint_penalty_with(gvals, &state.u, state)
}

/// Constraint penalty at explicit slack values.
pub fn constraint_penalty_with(gvals: &[f64], u: &[f64], state: &AdmmState) -> f64 {
    let sum: f64 = gvals
        .iter()
        .zip(u)
        .zip(&state.epsilons)
        .zip(&state.mu)
        .map(|(((&g, &u), &e), &m)| (g + u - e + m / state.rho).powi(2))
        .sum();
    0.5 * state.rho * sum
}

/// Sets every listed (inactive) relaxed-integer coordinate to the projection
/// of `b` onto its interval. Continuous coordinates are not touched.
pub fn solve_inactive(state: &AdmmState, inactive_int: &[usize], space: &SearchSpace, theta: &mut ThetaVector) {
    for &i in inactive_int {
        let (lo, hi) = space.int_bounds()[i];
        theta.relaxed_int[i] = project_box(state.b(i), lo as f64, hi as f64);
    }
}

/// `delta = Round(Proj(relaxed + lambda / rho))` coordinate-wise.
pub fn delta_min(state: &AdmmState, theta: &ThetaVector, space: &SearchSpace) -> Vec<i64> {
    theta
        .relaxed_int
        .iter()
        .zip(&state.lambda)
        .zip(space.int_bounds())
        .map(|((&v, &l), &(lo, hi))| project_and_round(v + l / state.rho, lo, hi))
        .collect()
}

/// `lambda += rho * (relaxed - delta)`; returns `||relaxed - delta||_inf`.
pub fn update_lambda(state: &mut AdmmState, theta: &ThetaVector) -> f64 {
    let mut residual = 0.0f64;
    for ((l, &v), &d) in state.lambda.iter_mut().zip(&theta.relaxed_int).zip(&state.delta) {
        let r = v - d as f64;
        *l += state.rho * r;
        residual = residual.max(r.abs());
    }
    residual
}

/// `mu_i += rho * (g_i - eps_i + u_i)`.
pub fn update_mu(state: &mut AdmmState, gvals: &[f64]) {
    for (((m, &g), &e), &u) in state.mu.iter_mut().zip(gvals).zip(&state.epsilons).zip(&state.u) {
        *m += state.rho * (g - e + u);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{AlgorithmSpec, IntParam, ModuleSpec, SpaceDocument};
    use proptest::prelude::*;

    fn state(delta: Vec<i64>, lambda: Vec<f64>, rho: f64) -> AdmmState {
        let n = delta.len();
        AdmmState {
            t: 0,
            delta,
            lambda,
            rho,
            mu: vec![],
            u: vec![],
            epsilons: vec![],
            z: ZAssignment(vec![0]),
            theta: ThetaVector { cont: vec![], relaxed_int: vec![0.0; n] },
        }
    }

    fn constrained(g_eps: Vec<f64>, u: Vec<f64>, mu: Vec<f64>, rho: f64) -> AdmmState {
        AdmmState { mu, u, epsilons: g_eps, ..state(vec![], vec![], rho) }
    }

    fn int_space(bounds: &[(i64, i64)]) -> SearchSpace {
        let int_params = bounds
            .iter()
            .enumerate()
            .map(|(i, &(lower, upper))| IntParam { name: format!("p{i}"), lower, upper })
            .collect();
        SearchSpace::build(&SpaceDocument {
            modules: vec![ModuleSpec {
                name: "m".into(),
                algorithms: vec![AlgorithmSpec { name: "a".into(), cont_params: vec![], int_params }],
            }],
        })
        .unwrap()
    }

    #[test]
    fn theta_penalty_examples() {
        assert_eq!(theta_penalty(&[2.5], &state(vec![3], vec![0.5], 1.0)), 0.0);
        assert_eq!(theta_penalty(&[2.0], &state(vec![3], vec![0.0], 1.0)), 0.5);
        let p = theta_penalty(&[2.0, 4.0], &state(vec![2, 4], vec![0.2, -0.4], 2.0));
        let mut oracle = 0.0;
        for (v, b) in [(2.0, 2.0 - 0.2 / 2.0), (4.0, 4.0 + 0.4 / 2.0)] {
            oracle += (v - b) * (v - b);
        }
        assert!((p - oracle).abs() < 1e-15);
        assert!((p - 0.05).abs() < 1e-12);
    }

    #[test]
    fn constraint_penalty_examples() {
        let s = constrained(vec![0.1], vec![0.0], vec![0.0], 1.0);
        assert!((constraint_penalty(&[0.12], &s) - 0.0002).abs() < 1e-15);
        let s = constrained(vec![0.1, 0.05], vec![0.04, 0.05], vec![0.0, 0.0], 3.0);
        assert!(constraint_penalty(&[0.06, 0.0], &s).abs() < 1e-15);
        let s = constrained(vec![0.1, 0.05], vec![0.0, 0.05], vec![0.3, 0.0], 2.0);
        assert!((constraint_penalty(&[0.2, 0.0], &s) - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn inactive_coordinates_are_projected() {
        let space = int_space(&[(1, 10), (0, 5), (0, 5)]);
        let s = state(vec![3, 0, 4], vec![0.5, 3.0, -4.0], 1.0);
        let mut theta = ThetaVector { cont: vec![], relaxed_int: vec![9.0, 9.0, 9.0] };
        solve_inactive(&s, &[0, 1, 2], &space, &mut theta);
        assert_eq!(theta.relaxed_int, vec![2.5, 0.0, 5.0]);
        let mut theta = ThetaVector { cont: vec![], relaxed_int: vec![9.0, 9.0, 9.0] };
        solve_inactive(&s, &[1], &space, &mut theta);
        assert_eq!(theta.relaxed_int, vec![9.0, 0.0, 9.0]);
    }

    #[test]
    fn delta_min_examples() {
        let space = int_space(&[(1, 5)]);
        let theta = ThetaVector { cont: vec![], relaxed_int: vec![2.4] };
        assert_eq!(delta_min(&state(vec![0], vec![0.0], 1.0), &theta, &space), vec![2]);
        assert_eq!(delta_min(&state(vec![0], vec![0.2], 1.0), &theta, &space), vec![3]);
    }

    #[test]
    fn lambda_update_examples() {
        let mut s = state(vec![2], vec![0.0], 1.0);
        let r = update_lambda(&mut s, &ThetaVector { cont: vec![], relaxed_int: vec![2.4] });
        assert!((s.lambda[0] - 0.4).abs() < 1e-15);
        assert!((r - 0.4).abs() < 1e-15);

        let mut s = state(vec![3], vec![0.7], 1.0);
        update_lambda(&mut s, &ThetaVector { cont: vec![], relaxed_int: vec![3.0] });
        assert_eq!(s.lambda, vec![0.7]);

        let mut s = state(vec![0, 0], vec![1.0, -1.0], 0.5);
        update_lambda(&mut s, &ThetaVector { cont: vec![], relaxed_int: vec![2.0, -2.0] });
        assert_eq!(s.lambda, vec![2.0, -2.0]);
    }

    #[test]
    fn mu_update_examples() {
        let mut s = constrained(vec![0.1], vec![0.0], vec![0.0], 2.0);
        update_mu(&mut s, &[0.12]);
        assert!((s.mu[0] - 0.04).abs() < 1e-15);

        let mut s = constrained(vec![0.1], vec![0.03], vec![0.5], 2.0);
        update_mu(&mut s, &[0.07]);
        assert!((s.mu[0] - 0.5).abs() < 1e-15);

        let mut s = constrained(vec![0.1, 0.2, 0.3], vec![0.0, 0.1, 0.3], vec![1.0, -1.0, 0.0], 1.5);
        let g = [0.5, 0.0, 0.1];
        update_mu(&mut s, &g);
        let mut oracle = vec![1.0, -1.0, 0.0];
        for i in 0..3 {
            oracle[i] += 1.5 * (g[i] - [0.1, 0.2, 0.3][i] + [0.0, 0.1, 0.3][i]);
        }
        assert_eq!(s.mu, oracle);
    }

    #[test]
    fn initial_state_is_midpoint() {
        let space = int_space(&[(1, 10), (0, 5)]);
        let s = AdmmState::initial(&space, 1.0, &[0.2]);
        assert_eq!(s.theta.relaxed_int, vec![5.5, 2.5]);
        assert_eq!(s.delta, vec![6, 3]);
        assert_eq!(s.lambda, vec![0.0, 0.0]);
        assert_eq!(s.u, vec![0.1]);
        assert_eq!(s.mu, vec![0.0]);
    }

    proptest! {
        #[test]
        fn delta_min_is_exhaustive_argmin(
            v in -60.0f64..60.0,
            l in -20.0f64..20.0,
            rho in 0.05f64..10.0,
            lo in -25i64..25,
            width in 0i64..50,
        ) {
            let hi = lo + width;
            let space = int_space(&[(lo, hi)]);
            let s = state(vec![0], vec![l], rho);
            let theta = ThetaVector { cont: vec![], relaxed_int: vec![v] };
            let got = delta_min(&s, &theta, &space)[0];
            let a = v + l / rho;
            let obj = |d: i64| 0.5 * rho * (a - d as f64).powi(2);
            let best = (lo..=hi).map(obj).fold(f64::INFINITY, f64::min);
            prop_assert!(obj(got) <= best);
        }
    }
}

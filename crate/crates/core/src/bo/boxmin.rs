//! Bound-constrained local minimization by projected gradient descent with
//! Barzilai-Borwein steps, Armijo backtracking and finite-difference
//! gradients. Every accepted step strictly decreases the objective, so the
//! returned value never exceeds the value at the start point.

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoxMinOptions {
    pub max_iter: usize,
    pub fd_step: f64,
    pub tol: f64,
}

impl Default for BoxMinOptions {
    fn default() -> Self {
        Self { max_iter: 50, fd_step: 1e-6, tol: 1e-9 }
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.max(lo).min(hi);
    }
}

fn fd_gradient<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    lower: &[f64],
    upper: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        if upper[i] <= lower[i] {
            continue;
        }
        let h = step * x[i].abs().max(1.0);
        let forward = x[i] + h <= upper[i];
        probe[i] = if forward { x[i] + h } else { x[i] - h };
        let fp = f(&probe);
        probe[i] = x[i];
        if fp.is_finite() {
            g[i] = if forward { (fp - fx) / h } else { (fx - fp) / h };
        }
    }
    g
}

pub(crate) fn minimize_box<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: BoxMinOptions,
) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return (x, fx);
    }
    let mut g = fd_gradient(&mut f, &x, fx, lower, upper, opts.fd_step);
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax == 0.0 {
        return (x, fx);
    }
    let mut alpha = 1.0 / gmax;

    for _ in 0..opts.max_iter {
        let mut accepted = None;
        let mut a = alpha;
        for _ in 0..40 {
            let mut cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - a * gi).collect();
            project(&mut cand, lower, upper);
            let dir_dot: f64 = cand
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((c, xi), gi)| (c - xi) * gi)
                .sum();
            let moved = cand
                .iter()
                .zip(&x)
                .fold(0.0f64, |m, (c, xi)| m.max((c - xi).abs()));
            if moved < opts.tol {
                break;
            }
            let fc = f(&cand);
            if fc.is_finite() && fc < fx && fc <= fx + 1e-4 * dir_dot.min(0.0) {
                accepted = Some((cand, fc));
                break;
            }
            a *= 0.5;
        }
        let Some((xn, fxn)) = accepted else { break };
        let gn = fd_gradient(&mut f, &xn, fxn, lower, upper, opts.fd_step);
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..x.len() {
            let s = xn[i] - x[i];
            ss += s * s;
            sy += s * (gn[i] - g[i]);
        }
        alpha = if sy > 1e-300 { (ss / sy).min(1e10) } else { a * 4.0 };
        x = xn;
        fx = fxn;
        g = gn;
    }
    (x, fx)
}

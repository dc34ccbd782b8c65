use rand::Rng;
use statrs::function::erf::erfc;

use super::boxmin::{minimize_box, BoxMinOptions};
use super::gp::GpModel;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `y_best` of a Gaussian with the given mean and
/// standard deviation:
/// `(y_best - mean) Phi(u) + std phi(u)` with `u = (y_best - mean) / std`.
/// At `std == 0` this is the limit `max(y_best - mean, 0)`.
pub fn expected_improvement(mean: f64, std: f64, y_best: f64) -> f64 {
    let gain = y_best - mean;
    if std <= 0.0 {
        return gain.max(0.0);
    }
    let u = gain / std;
    (gain * normal_cdf(u) + std * normal_pdf(u)).max(0.0)
}

/// EI of the model's posterior at `x` against the smallest training target.
pub fn ei_at(model: &GpModel, x: &[f64]) -> f64 {
    let y_best = model.train_y().iter().copied().fold(f64::INFINITY, f64::min);
    match model.posterior(x) {
        Ok((m, v)) => expected_improvement(m, v.sqrt(), y_best),
        Err(_) => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub ei: f64,
    /// No start found positive EI; `x` is a uniform random point.
    pub degenerate: bool,
}

/// Maximizes EI over `bounds` by bounded local ascent from several starts:
/// the best training point plus `restarts` random points (the most promising
/// of a larger random pool). The returned EI is at least the EI of every
/// start.
pub fn propose_next<R: Rng>(
    model: &GpModel,
    bounds: &[(f64, f64)],
    restarts: usize,
    rng: &mut R,
) -> Proposal {
    propose_next_composite(model, bounds, restarts, &|_: &[f64]| 0.0, rng)
}

/// [`propose_next`] for an objective `h(x) + known(x)` where the model
/// describes `h` and `known` is exact. Improvement is measured on the sum.
pub fn propose_next_composite<R: Rng>(
    model: &GpModel,
    bounds: &[(f64, f64)],
    restarts: usize,
    known: &dyn Fn(&[f64]) -> f64,
    rng: &mut R,
) -> Proposal {
    let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let upper: Vec<f64> = bounds.iter().map(|b| b.1).collect();
    let sample = |rng: &mut R| -> Vec<f64> {
        bounds
            .iter()
            .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect()
    };
    let totals: Vec<f64> = model
        .train_x()
        .iter()
        .zip(model.train_y())
        .map(|(x, y)| y + known(x))
        .collect();
    let y_best = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let ei = |x: &[f64]| -> f64 {
        match model.posterior(x) {
            Ok((m, v)) => expected_improvement(m + known(x), v.sqrt(), y_best),
            Err(_) => 0.0,
        }
    };

    let pool = restarts.max(1) * 32;
    let mut scored: Vec<(f64, Vec<f64>)> = (0..pool)
        .map(|_| {
            let x = sample(rng);
            (ei(&x), x)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut starts: Vec<Vec<f64>> = scored.into_iter().take(restarts.max(1)).map(|s| s.1).collect();
    if let Some((i, _)) = totals.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
        let mut best = model.train_x()[i].clone();
        for ((v, lo), hi) in best.iter_mut().zip(&lower).zip(&upper) {
            *v = v.clamp(*lo, *hi);
        }
        starts.push(best);
    }

    let opts = BoxMinOptions { max_iter: 30, fd_step: 1e-7, tol: 1e-10 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let (x, neg) = minimize_box(|p| -ei(p), s, &lower, &upper, opts);
        let value = -neg;
        if best.as_ref().is_none_or(|b| value > b.1) {
            best = Some((x, value));
        }
    }
    match best {
        Some((x, ei)) if ei > 0.0 => Proposal { x, ei, degenerate: false },
        _ => Proposal { x: sample(rng), ei: 0.0, degenerate: true },
    }
}

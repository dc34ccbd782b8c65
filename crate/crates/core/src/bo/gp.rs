use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::boxmin::{minimize_box, BoxMinOptions};
use super::kernel::{matern52_unit, Matern52};
use super::GpError;

/// Smallest observation-noise variance the model accepts.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Box (in natural units) searched when fitting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperBounds {
    pub amplitude: (f64, f64),
    pub length_scale: (f64, f64),
    pub noise: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            amplitude: (1e-3, 1e3),
            length_scale: (1e-3, 1e3),
            noise: (NOISE_FLOOR, 10.0),
        }
    }
}

#[derive(Debug, Clone)]
struct Factor {
    /// Lower Cholesky factor of `K + noise * I`.
    l: DMatrix<f64>,
    /// `(K + noise * I)^-1 y`
    alpha: DVector<f64>,
    log_det: f64,
}

/// Zero-mean Gaussian process with an ARD Matérn 5/2 kernel.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: Matern52,
    noise: f64,
    bounds: HyperBounds,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<f64>,
    factor: Option<Factor>,
}

impl GpModel {
    pub fn new(kernel: Matern52, noise: f64) -> Self {
        Self {
            kernel,
            noise: noise.max(NOISE_FLOOR),
            bounds: HyperBounds::default(),
            train_x: Vec::new(),
            train_y: Vec::new(),
            factor: None,
        }
    }

    pub fn with_bounds(mut self, bounds: HyperBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn kernel(&self) -> &Matern52 {
        &self.kernel
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn len(&self) -> usize {
        self.train_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_y.is_empty()
    }

    pub fn train_x(&self) -> &[Vec<f64>] {
        &self.train_x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.train_y
    }

    /// Replaces the training set and refactorizes.
    pub fn set_data(&mut self, x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<(), GpError> {
        if x.len() != y.len() {
            return Err(GpError::DataLength { x: x.len(), y: y.len() });
        }
        if let Some(bad) = x.iter().find(|p| p.len() != self.dim()) {
            return Err(GpError::DimensionMismatch { expected: self.dim(), got: bad.len() });
        }
        self.train_x = x;
        self.train_y = y;
        self.refactor()
    }

    pub fn append(&mut self, x: Vec<f64>, y: f64) -> Result<(), GpError> {
        if x.len() != self.dim() {
            return Err(GpError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        self.train_x.push(x);
        self.train_y.push(y);
        self.refactor()
    }

    pub fn set_hyperparams(&mut self, kernel: Matern52, noise: f64) -> Result<(), GpError> {
        if kernel.dim() != self.dim() {
            return Err(GpError::DimensionMismatch { expected: self.dim(), got: kernel.dim() });
        }
        self.kernel = kernel;
        self.noise = noise.max(NOISE_FLOOR);
        self.refactor()
    }

    fn gram(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.kernel.value(&self.train_x[i], &self.train_x[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Factorizes `K + noise * I`. If the matrix is numerically singular
    /// (duplicate inputs with almost no noise) the noise is raised until the
    /// factorization succeeds.
    fn refactor(&mut self) -> Result<(), GpError> {
        self.factor = None;
        if self.is_empty() {
            return Ok(());
        }
        let gram = self.gram();
        let y = DVector::from_column_slice(&self.train_y);
        let mut noise = self.noise;
        for _ in 0..24 {
            let mut k = gram.clone();
            for i in 0..k.nrows() {
                k[(i, i)] += noise;
            }
            if let Some(ch) = k.cholesky() {
                let alpha = ch.solve(&y);
                let l = ch.unpack();
                let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
                self.noise = noise;
                self.factor = Some(Factor { l, alpha, log_det });
                return Ok(());
            }
            noise = (noise * 10.0).max(1e-12);
        }
        Err(GpError::NotPositiveDefinite)
    }

    /// Posterior mean and variance at `x`.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        let f = self.factor.as_ref().ok_or(GpError::Unfitted)?;
        if x.len() != self.dim() {
            return Err(GpError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let n = self.len();
        let kstar: Vec<f64> = self.train_x.iter().map(|t| self.kernel.value(t, x)).collect();
        let mean: f64 = kstar.iter().zip(f.alpha.iter()).map(|(a, b)| a * b).sum();
        // v = L^-1 k*, by forward substitution.
        let mut v = kstar;
        for i in 0..n {
            let mut s = v[i];
            for j in 0..i {
                s -= f.l[(i, j)] * v[j];
            }
            v[i] = s / f.l[(i, i)];
        }
        let prior = self.kernel.amplitude * self.kernel.amplitude;
        let var = prior - v.iter().map(|a| a * a).sum::<f64>();
        Ok((mean, var.max(0.0)))
    }

    /// `log det(K + noise I) + y^T (K + noise I)^-1 y`.
    pub fn nlml(&self) -> Result<f64, GpError> {
        let f = self.factor.as_ref().ok_or(GpError::Unfitted)?;
        let fit: f64 = self.train_y.iter().zip(f.alpha.iter()).map(|(a, b)| a * b).sum();
        Ok(f.log_det + fit)
    }

    /// Fits amplitude, length scales and noise by minimizing the negative log
    /// marginal likelihood in log-parameter space. The current
    /// hyperparameters are always one of the starts, so the objective never
    /// increases. Returns the final objective value.
    pub fn fit_hyperparams<R: Rng>(&mut self, starts: usize, rng: &mut R) -> Result<f64, GpError> {
        if self.len() < 2 {
            return Err(GpError::TooFewPoints(self.len()));
        }
        let d = self.dim();
        let n = self.len();
        let b = self.bounds;
        let mut lower = vec![b.amplitude.0.ln()];
        let mut upper = vec![b.amplitude.1.ln()];
        for _ in 0..d {
            lower.push(b.length_scale.0.ln());
            upper.push(b.length_scale.1.ln());
        }
        lower.push(b.noise.0.max(NOISE_FLOOR).ln());
        upper.push(b.noise.1.ln());

        // Squared coordinate differences, shared by every likelihood call.
        let mut diffs = vec![0.0; d * n * n];
        for i in 0..n {
            for j in 0..i {
                for k in 0..d {
                    let t = self.train_x[i][k] - self.train_x[j][k];
                    diffs[(k * n + i) * n + j] = t * t;
                }
            }
        }
        let y = DVector::from_column_slice(&self.train_y);
        let objective = |p: &[f64]| nlml_from_log_params(p, &diffs, &y, n, d);

        let mut current = vec![self.kernel.amplitude.ln()];
        current.extend(self.kernel.length_scales.iter().map(|l| l.ln()));
        current.push(self.noise.ln());
        for ((c, lo), hi) in current.iter_mut().zip(&lower).zip(&upper) {
            *c = c.clamp(*lo, *hi);
        }

        let opts = BoxMinOptions { max_iter: 40, fd_step: 1e-5, tol: 1e-8 };
        let mut best = minimize_box(objective, &current, &lower, &upper, opts);
        for _ in 1..starts.max(1) {
            let start: Vec<f64> = lower
                .iter()
                .zip(&upper)
                .enumerate()
                .map(|(i, (&lo, &hi))| {
                    // Random starts stay in a sensible sub-box.
                    let (lo, hi) = if i == 0 {
                        (lo.max((0.1f64).ln()), hi.min((10.0f64).ln()))
                    } else if i <= d {
                        (lo.max((0.05f64).ln()), hi.min((2.0f64).ln()))
                    } else {
                        (lo, hi.min((1e-2f64).ln()).max(lo))
                    };
                    if hi > lo { rng.random_range(lo..=hi) } else { lo }
                })
                .collect();
            let cand = minimize_box(objective, &start, &lower, &upper, opts);
            if cand.1 < best.1 {
                best = cand;
            }
        }

        let p = best.0;
        if best.1.is_finite() {
            let kernel = Matern52::new(p[0].exp(), p[1..=d].iter().map(|v| v.exp()).collect());
            self.set_hyperparams(kernel, p[d + 1].exp())?;
        } else {
            self.refactor()?;
        }
        self.nlml()
    }
}

fn nlml_from_log_params(p: &[f64], diffs: &[f64], y: &DVector<f64>, n: usize, d: usize) -> f64 {
    let amp2 = (2.0 * p[0]).exp();
    let inv_l2: Vec<f64> = p[1..=d].iter().map(|v| (-2.0 * v).exp()).collect();
    let noise = p[d + 1].exp();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = amp2 + noise;
        for j in 0..i {
            let mut r2 = 0.0;
            for (kk, w) in inv_l2.iter().enumerate() {
                r2 += diffs[(kk * n + i) * n + j] * w;
            }
            let v = amp2 * matern52_unit(r2);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    match k.cholesky() {
        Some(ch) => {
            let log_det = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let alpha = ch.solve(y);
            let val = log_det + y.dot(&alpha);
            if val.is_finite() {
                val
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    }
}

use super::GpError;

const SQRT5: f64 = 2.236_067_977_499_79;

/// ARD Matérn 5/2 kernel
/// `k(x, x') = a^2 exp(-sqrt(5) r) (1 + sqrt(5) r + 5/3 r^2)` with
/// `r^2 = sum_i (x_i - x'_i)^2 / l_i^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matern52 {
    /// Amplitude `a` (the kernel's standard deviation, not its variance).
    pub amplitude: f64,
    pub length_scales: Vec<f64>,
}

impl Matern52 {
    pub fn new(amplitude: f64, length_scales: Vec<f64>) -> Self {
        Self { amplitude, length_scales }
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, GpError> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.dim(),
                got: if x.len() != self.dim() { x.len() } else { y.len() },
            });
        }
        Ok(self.value(x, y))
    }

    /// Unchecked evaluation; slices must have length `dim()`.
    pub(crate) fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(y)
            .zip(&self.length_scales)
            .map(|((a, b), l)| {
                let d = (a - b) / l;
                d * d
            })
            .sum();
        self.value_at_r2(r2)
    }

    pub(crate) fn value_at_r2(&self, r2: f64) -> f64 {
        matern52_unit(r2) * self.amplitude * self.amplitude
    }
}

/// Unit-amplitude Matérn 5/2 as a function of the squared scaled distance.
pub(crate) fn matern52_unit(r2: f64) -> f64 {
    let r = r2.sqrt();
    (-SQRT5 * r).exp() * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_is_amplitude_squared() {
        let k = Matern52::new(1.7, vec![0.3, 2.0]);
        let x = [0.4, -1.0];
        assert!((k.eval(&x, &x).unwrap() - 1.7 * 1.7).abs() < 1e-15);
    }

    #[test]
    fn unit_distance_value() {
        // e^{-sqrt5} (1 + sqrt5 + 5/3), evaluated independently.
        let expect = (-(5f64).sqrt()).exp() * (1.0 + (5f64).sqrt() + 5.0 / 3.0);
        let k = Matern52::new(1.0, vec![1.0]);
        let v = k.eval(&[0.0], &[1.0]).unwrap();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.52399).abs() < 1e-5);
    }

    #[test]
    fn decays_monotonically_along_a_ray() {
        let k = Matern52::new(1.0, vec![0.5, 1.5]);
        let dir = [0.6, -0.8];
        let mut prev = k.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        for step in 1..200 {
            let t = step as f64 * 0.25;
            let v = k.eval(&[0.0, 0.0], &[dir[0] * t, dir[1] * t]).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn symmetric_and_dimension_checked() {
        let k = Matern52::new(1.0, vec![0.5, 1.5]);
        let (a, b) = ([0.1, 0.2], [0.9, -0.3]);
        assert_eq!(k.eval(&a, &b).unwrap(), k.eval(&b, &a).unwrap());
        assert!(matches!(
            k.eval(&[0.0], &b),
            Err(GpError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn gram_matrices_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(2..=30);
            let d = rng.random_range(1..=5);
            let k = Matern52::new(
                rng.random_range(0.1..3.0),
                (0..d).map(|_| rng.random_range(0.05..2.0)).collect(),
            );
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
                .collect();
            let g = DMatrix::from_fn(n, n, |i, j| k.value(&pts[i], &pts[j]));
            let min_eig = g.symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-8, "min eigenvalue {min_eig}");
        }
    }
}

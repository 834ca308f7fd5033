use crate::density::TargetDensity;
use crate::linalg::{self, Cholesky};
use crate::Result;

/// `N(mean, cov)` as a target, known up to its normalizer.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: Vec<f64>,
    chol: Cholesky,
    precision: Vec<f64>,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        let chol = Cholesky::new(cov, d)?;
        let precision = linalg::spd_inverse(cov, d)?;
        Ok(Self {
            mean,
            chol,
            precision,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            chol: Cholesky::identity(dim),
            precision: linalg::identity(dim),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> Vec<f64> {
        self.chol.matrix()
    }
}

impl TargetDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        -0.5 * self.chol.mahalanobis_sq(&diff)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn evaluate(&self, x: &[f64], with_gradient: bool) -> (f64, Option<Vec<f64>>) {
        let lp = self.log_density(x);
        if !with_gradient {
            return (lp, None);
        }
        let d = self.dim();
        let grad = (0..d)
            .map(|i| {
                -(0..d)
                    .map(|j| self.precision[i * d + j] * (x[j] - self.mean[j]))
                    .sum::<f64>()
            })
            .collect();
        (lp, Some(grad))
    }
}

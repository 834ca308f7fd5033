use nalgebra::{DMatrix, DVector};

use crate::density::TargetDensity;
use crate::{Error, Result};

/// Gaussian approximation `N(mode, (−∇² log ρ(mode))⁻¹)`.
#[derive(Debug, Clone)]
pub struct LaplaceApproximation {
    pub mode: Vec<f64>,
    /// Row-major inverse of the negative Hessian at the mode.
    pub covariance: Vec<f64>,
    pub log_density_at_mode: f64,
    pub iterations: usize,
}

impl LaplaceApproximation {
    pub fn std_devs(&self) -> Vec<f64> {
        let d = self.mode.len();
        (0..d).map(|i| self.covariance[i * d + i].sqrt()).collect()
    }
}

/// Hessian of `log ρ` by central differences of the analytic gradient,
/// symmetrized. Step `1e−5 · max(1, |xᵢ|)`.
pub fn fd_hessian<T: TargetDensity + ?Sized>(target: &T, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        let step = 1e-5 * x[j].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += step;
        xm[j] -= step;
        let gp = target.grad_log_density(&xp).ok_or(Error::MissingGradient)?;
        let gm = target.grad_log_density(&xm).ok_or(Error::MissingGradient)?;
        for i in 0..d {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Maximize `log ρ` by Levenberg–Marquardt damped Newton steps (damping
/// scaled by the Hessian diagonal) and return the Laplace approximation.
pub fn laplace_approximation<T: TargetDensity + ?Sized>(
    target: &T,
    start: &[f64],
) -> Result<LaplaceApproximation> {
    let d = target.dim();
    let mut x = DVector::from_column_slice(start);
    let (mut lp, grad) = target.evaluate(start, true);
    let mut g = DVector::from_vec(grad.ok_or(Error::MissingGradient)?);
    if !lp.is_finite() {
        return Err(Error::Optimizer("start point has zero density".into()));
    }
    let mut lambda = 1e-3;
    let max_iter = 500;
    for iter in 0..max_iter {
        let neg_h = -fd_hessian(target, x.as_slice())?;
        let mut accepted = false;
        for _ in 0..60 {
            let mut damped = neg_h.clone();
            for i in 0..d {
                damped[(i, i)] += lambda * neg_h[(i, i)].abs().max(1e-12);
            }
            let Some(step) = damped.clone().cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = &x + &step;
            let (lp_new, g_new) = target.evaluate(candidate.as_slice(), true);
            if lp_new.is_finite() && lp_new >= lp {
                let small = step.amax() <= 1e-12 * (1.0 + x.amax());
                x = candidate;
                lp = lp_new;
                g = DVector::from_vec(g_new.ok_or(Error::MissingGradient)?);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small {
                    return finish(target, x, lp, iter + 1);
                }
                break;
            }
            lambda *= 10.0;
        }
        let scale = neg_h.diagonal().map(|v| v.abs().sqrt().max(1e-300));
        let scaled_grad = g.component_div(&scale).amax();
        if !accepted || scaled_grad < 1e-9 {
            if scaled_grad < 1e-6 {
                return finish(target, x, lp, iter + 1);
            }
            return Err(Error::Optimizer(format!(
                "no ascent step found at iteration {iter}; scaled gradient {scaled_grad:e}"
            )));
        }
    }
    Err(Error::Optimizer(format!("no convergence in {max_iter} iterations")))
}

fn finish<T: TargetDensity + ?Sized>(
    target: &T,
    x: DVector<f64>,
    lp: f64,
    iterations: usize,
) -> Result<LaplaceApproximation> {
    let d = x.len();
    let neg_h = -fd_hessian(target, x.as_slice())?;
    let chol = neg_h.cholesky().ok_or(Error::NotPositiveDefinite {
        pivot: 0,
        value: f64::NAN,
    })?;
    let cov = chol.inverse();
    let cov = (&cov + cov.transpose()) * 0.5;
    let mut covariance = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            covariance[i * d + j] = cov[(i, j)];
        }
    }
    Ok(LaplaceApproximation {
        mode: x.as_slice().to_vec(),
        covariance,
        log_density_at_mode: lp,
        iterations,
    })
}

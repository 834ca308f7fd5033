//! Posterior of the two-parameter groundwater boundary-value problem
//! `−(e^{u₁} p′)′ = 1` on `(0, 1)` with `p(0) = 0`, `p(1) = u₂`, observed at
//! two points under Gaussian noise. The pressure has the closed form
//! `p(x) = u₂ x + (e^{−u₁}/2)(x − x²)`.

use crate::density::TargetDensity;
use crate::{Error, Result};

pub const BVP_OBSERVATION: [f64; 2] = [27.5, 79.7];
pub const BVP_OBSERVATION_POINTS: [f64; 2] = [0.25, 0.75];

const OVERFLOW_THRESHOLD: f64 = -700.0;

/// `F(u) = (p(0.25), p(0.75))` and its Jacobian (row-major, `∂Fᵢ/∂uⱼ`).
pub fn bvp_forward(u: &[f64]) -> Result<([f64; 2], [f64; 4])> {
    forward_at(u, BVP_OBSERVATION_POINTS)
}

fn forward_at(u: &[f64], points: [f64; 2]) -> Result<([f64; 2], [f64; 4])> {
    if u[0] < OVERFLOW_THRESHOLD {
        return Err(Error::Overflow(format!("exp(-u1) with u1 = {}", u[0])));
    }
    let e = (-u[0]).exp();
    let mut f = [0.0; 2];
    let mut jac = [0.0; 4];
    for (i, &x) in points.iter().enumerate() {
        let bump = 0.5 * (x - x * x);
        f[i] = u[1] * x + e * bump;
        jac[2 * i] = -e * bump;
        jac[2 * i + 1] = x;
    }
    Ok((f, jac))
}

/// Sampler target `exp(−(τ/2)‖y − F(u)‖²) · exp(−‖u‖²/2)`: the likelihood
/// with the standard normal prior folded in (densities w.r.t. Lebesgue).
#[derive(Debug, Clone)]
pub struct BvpPosterior {
    pub observation: [f64; 2],
    pub noise_precision: f64,
    pub observation_points: [f64; 2],
}

impl Default for BvpPosterior {
    fn default() -> Self {
        Self {
            observation: BVP_OBSERVATION,
            noise_precision: 100.0,
            observation_points: BVP_OBSERVATION_POINTS,
        }
    }
}

impl BvpPosterior {
    /// Log-likelihood `−(τ/2)‖y − F(u)‖²` and its gradient.
    pub fn log_likelihood(&self, u: &[f64]) -> Result<(f64, [f64; 2])> {
        let (f, jac) = forward_at(u, self.observation_points)?;
        let r = [self.observation[0] - f[0], self.observation[1] - f[1]];
        let ll = -0.5 * self.noise_precision * (r[0] * r[0] + r[1] * r[1]);
        let t = self.noise_precision;
        let grad = [
            t * (r[0] * jac[0] + r[1] * jac[2]),
            t * (r[0] * jac[1] + r[1] * jac[3]),
        ];
        Ok((ll, grad))
    }
}

impl TargetDensity for BvpPosterior {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        self.evaluate(u, false).0
    }

    fn has_gradient(&self) -> bool {
        true
    }

    /// Below `u₁ = −700` the likelihood underflows to zero far beyond double
    /// precision, so the log density is reported as `−∞` there.
    fn evaluate(&self, u: &[f64], with_gradient: bool) -> (f64, Option<Vec<f64>>) {
        match self.log_likelihood(u) {
            Ok((ll, g)) => {
                let lp = ll - 0.5 * (u[0] * u[0] + u[1] * u[1]);
                if !lp.is_finite() {
                    return (f64::NEG_INFINITY, None);
                }
                let grad = with_gradient.then(|| vec![g[0] - u[0], g[1] - u[1]]);
                (lp, grad)
            }
            Err(_) => (f64::NEG_INFINITY, None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{finite_difference_gradient, relative_error, RngStream};
    use rand::Rng;

    #[test]
    fn forward_examples() {
        let (f, _) = bvp_forward(&[0.0, 0.0]).unwrap();
        assert!((f[0] - 0.09375).abs() < 1e-15 && (f[1] - 0.09375).abs() < 1e-15);
        let (f, _) = bvp_forward(&[0.0, 1.0]).unwrap();
        assert!((f[0] - 0.34375).abs() < 1e-15 && (f[1] - 0.84375).abs() < 1e-15);
        let (a, _) = bvp_forward(&[0.7, 2.0]).unwrap();
        let (b, _) = bvp_forward(&[0.7, 2.5]).unwrap();
        assert!((b[0] - a[0] - 0.125).abs() < 1e-12 && (b[1] - a[1] - 0.375).abs() < 1e-12);
        assert!(matches!(bvp_forward(&[-701.0, 0.0]), Err(Error::Overflow(_))));
    }

    #[test]
    fn likelihood_maximal_at_exact_fit() {
        let u1 = 0.3f64;
        let bump = 0.09375 * (-u1).exp();
        // Choose y = F(u) for u = (u1, 2).
        let target = BvpPosterior {
            observation: [0.5 + bump, 1.5 + bump],
            ..Default::default()
        };
        let (ll, g) = target.log_likelihood(&[u1, 2.0]).unwrap();
        assert_eq!(ll, 0.0);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_fd_at_random_points() {
        let t = BvpPosterior::default();
        let mut rng = RngStream::new(11, 0);
        for _ in 0..100 {
            let u = [rng.random_range(-6.0..2.0), rng.random_range(80.0..110.0)];
            let g = t.grad_log_density(&u).unwrap();
            let fd = finite_difference_gradient(|v| t.log_density(v), &u);
            for (a, b) in g.iter().zip(&fd) {
                assert!(relative_error(*a, *b, 1e-3) < 1e-5, "{a} vs {b} at {u:?}");
            }
        }
    }

    #[test]
    fn far_left_is_zero_density() {
        let t = BvpPosterior::default();
        assert_eq!(t.log_density(&[-800.0, 0.0]), f64::NEG_INFINITY);
    }
}

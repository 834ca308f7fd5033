//! Gauss–Hermite and Gauss–Legendre rules and a tensor-product posterior
//! mean oracle.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::density::{log_sum_exp, TargetDensity};
use crate::estimators::Functional;
use crate::linalg::Cholesky;
use crate::problems::LaplaceApproximation;
use crate::{Error, Result};

/// Nodes and log-weights of the `n`-point Gauss–Hermite rule for the weight
/// `e^{−x²}`. Nodes start from the eigenvalues of the Jacobi matrix and are
/// polished by Newton steps on the orthonormal recurrence, which also yields
/// the weights without underflow. Accurate for `n` up to several hundred.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    guesses.sort_by(|a, b| b.total_cmp(a));

    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut lw = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = guesses[i];
        let mut pp = 0.0;
        for iter in 0..20 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            if iter > 0 && dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
            z -= dz;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        let w = 2f64.ln() - 2.0 * pp.abs().ln();
        lw[i] = w;
        lw[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, lw)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let xm = 0.5 * (b + a);
    let xl = 0.5 * (b - a);
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = xm - xl * z;
        x[n - 1 - i] = xm + xl * z;
        w[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Affine map `u = center + L z` placing standard-normal quadrature nodes
/// `z` in parameter space.
#[derive(Debug, Clone)]
pub struct QuadratureOracle {
    pub center: Vec<f64>,
    pub factor: Cholesky,
    pub nodes_per_dim: usize,
}

impl QuadratureOracle {
    /// Nodes placed by the prior `N(0, diag(variances))`.
    pub fn prior(variances: &[f64], nodes_per_dim: usize) -> Result<Self> {
        let d = variances.len();
        let mut cov = vec![0.0; d * d];
        for (i, v) in variances.iter().enumerate() {
            cov[i * d + i] = *v;
        }
        Ok(Self {
            center: vec![0.0; d],
            factor: Cholesky::new(&cov, d)?,
            nodes_per_dim,
        })
    }

    /// Nodes centered at a Laplace approximation of the posterior.
    pub fn laplace(la: &LaplaceApproximation, nodes_per_dim: usize) -> Result<Self> {
        Ok(Self {
            center: la.mode.clone(),
            factor: Cholesky::new(&la.covariance, la.mode.len())?,
            nodes_per_dim,
        })
    }
}

/// `E_μ(f)` by tensor Gauss–Hermite quadrature of `ρ` after the oracle's
/// change of variables. Weights are formed in the log domain as
/// `log wᵢ + log ρ(u) + |z|²/2`; the Jacobian cancels on normalization.
pub fn gh_posterior_mean<T: TargetDensity + ?Sized>(
    target: &T,
    f: &Functional,
    oracle: &QuadratureOracle,
) -> Result<Vec<f64>> {
    let d = target.dim();
    if oracle.center.len() != d || oracle.factor.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: oracle.center.len(),
        });
    }
    let n = oracle.nodes_per_dim;
    let total = n
        .checked_pow(d as u32)
        .filter(|&t| t <= 50_000_000)
        .ok_or_else(|| Error::InvalidArgument(format!("{n}^{d} quadrature nodes is too many")))?;
    let (x, lw) = gauss_hermite(n);
    let z_nodes: Vec<f64> = x.iter().map(|v| v * 2f64.sqrt()).collect();
    let m = f.dim_out;

    // Rows over the first axis are evaluated in parallel; each row returns its
    // log weights and f values in node order, so the reduction is sequential.
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i0| {
            let per_row = total / n;
            let mut lws = Vec::with_capacity(per_row);
            let mut fs = Vec::with_capacity(per_row * m);
            let mut z = vec![0.0; d];
            let mut u = vec![0.0; d];
            let mut idx = vec![0usize; d];
            idx[0] = i0;
            let mut fbuf = vec![0.0; m];
            for _ in 0..per_row {
                let mut logw = 0.0;
                for k in 0..d {
                    z[k] = z_nodes[idx[k]];
                    logw += lw[idx[k]];
                }
                oracle.factor.mul_lower(&z, &mut u);
                u.iter_mut().zip(&oracle.center).for_each(|(a, c)| *a += c);
                let lp = target.log_density(&u);
                let zz: f64 = z.iter().map(|v| v * v).sum();
                let l = if lp == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    logw + lp + 0.5 * zz
                };
                lws.push(l);
                if l > f64::NEG_INFINITY {
                    f.eval_into(&u, &mut fbuf);
                } else {
                    fbuf.iter_mut().for_each(|v| *v = 0.0);
                }
                fs.extend_from_slice(&fbuf);
                for k in (1..d).rev() {
                    idx[k] += 1;
                    if idx[k] < n {
                        break;
                    }
                    idx[k] = 0;
                }
            }
            (lws, fs)
        })
        .collect();

    let all_lw: Vec<f64> = rows.iter().flat_map(|(l, _)| l.iter().copied()).collect();
    let lse = log_sum_exp(&all_lw)?;
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let mut mean = vec![0.0; m];
    for (lws, fs) in &rows {
        for (l, fv) in lws.iter().zip(fs.chunks(m)) {
            let w = (l - lse).exp();
            if w > 0.0 {
                mean.iter_mut().zip(fv).for_each(|(a, b)| *a += w * b);
            }
        }
    }
    Ok(mean)
}

#[derive(Debug, Clone)]
pub struct QuadratureResult {
    pub mean: Vec<f64>,
    pub nodes_per_dim: usize,
    /// Max relative change between the last two refinements.
    pub relative_change: f64,
}

/// Evaluate at `oracle.nodes_per_dim` and keep doubling (at most three
/// times) until two consecutive results agree to `tol` relative.
pub fn gh_posterior_mean_converged<T: TargetDensity + ?Sized>(
    target: &T,
    f: &Functional,
    oracle: &QuadratureOracle,
    tol: f64,
) -> Result<QuadratureResult> {
    let mut current = oracle.clone();
    let mut prev = gh_posterior_mean(target, f, &current)?;
    let mut change = f64::INFINITY;
    for _ in 0..3 {
        current.nodes_per_dim *= 2;
        let next = gh_posterior_mean(target, f, &current)?;
        change = prev
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
            .fold(0.0, f64::max);
        prev = next;
        if change < tol {
            return Ok(QuadratureResult {
                mean: prev,
                nodes_per_dim: current.nodes_per_dim,
                relative_change: change,
            });
        }
    }
    Err(Error::QuadratureNotConverged {
        relative_change: change,
        refinements: 3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::FnTarget;

    #[test]
    fn hermite_moments() {
        for n in [5, 20, 200, 400] {
            let (x, lw) = gauss_hermite(n);
            let m0: f64 = lw.iter().map(|l| l.exp()).sum();
            let m2: f64 = x.iter().zip(&lw).map(|(x, l)| x * x * l.exp()).sum();
            assert!((m0 - PI.sqrt()).abs() < 1e-12, "n={n} m0={m0}");
            assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-12, "n={n} m2={m2}");
            assert!(x.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10, -1.0, 3.0);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(5)).sum();
        assert!((i - (3f64.powi(6) - 1.0) / 6.0).abs() < 1e-10);
    }

    #[test]
    fn flat_likelihood_gives_prior_mean() {
        let t = FnTarget::new(2, |u| -0.5 * (u[0] * u[0] + u[1] * u[1]));
        let o = QuadratureOracle::prior(&[1.0, 1.0], 20).unwrap();
        let m = gh_posterior_mean(&t, &Functional::identity(2), &o).unwrap();
        assert!(m[0].abs() < 1e-14 && m[1].abs() < 1e-14);
    }

    #[test]
    fn axis_relabeling_symmetry() {
        let a = FnTarget::new(2, |u| -0.5 * (u[0] * u[0] + u[1] * u[1]) - (u[0] - 0.3 * u[1] * u[1]).powi(2));
        let b = FnTarget::new(2, |u| -0.5 * (u[0] * u[0] + u[1] * u[1]) - (u[1] - 0.3 * u[0] * u[0]).powi(2));
        let o = QuadratureOracle::prior(&[1.0, 1.0], 60).unwrap();
        let ma = gh_posterior_mean(&a, &Functional::identity(2), &o).unwrap();
        let mb = gh_posterior_mean(&b, &Functional::identity(2), &o).unwrap();
        assert!((ma[0] - mb[1]).abs() < 1e-13 && (ma[1] - mb[0]).abs() < 1e-13);
    }
}

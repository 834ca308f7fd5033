//! Exact matrix versions of the MH kernel `K`, the augmented kernel `K_aug`,
//! the swap/stay kernel `H` and the proposal averaging/lifting operators on
//! a finite state space with counting reference measure.
//!
//! Pair states `(x, y)` are indexed as `x · g + y`. Operators act on
//! functions as column vectors, distributions as row vectors.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::{Error, Result};

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FiniteChainModel {
    pub g: usize,
    pub rho: Vec<f64>,
    pub proposal: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub k_aug: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub nu: DVector<f64>,
}

pub fn pair(g: usize, x: usize, y: usize) -> usize {
    x * g + y
}

/// Assemble `K`, `K_aug`, `H`, `μ` and `ν` from an unnormalized target and a
/// row-stochastic proposal matrix.
pub fn build_finite_model(rho: &[f64], proposal: &DMatrix<f64>) -> Result<FiniteChainModel> {
    let g = rho.len();
    if g == 0 {
        return Err(Error::InvalidModel("empty state space".into()));
    }
    if proposal.nrows() != g || proposal.ncols() != g {
        return Err(Error::DimensionMismatch {
            expected: g,
            got: proposal.nrows(),
        });
    }
    for (x, &r) in rho.iter().enumerate() {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidModel(format!("rho[{x}] = {r} is not a finite non-negative value")));
        }
    }
    let total: f64 = rho.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidModel("rho vanishes everywhere".into()));
    }
    for x in 0..g {
        let mut sum = 0.0;
        for y in 0..g {
            let p = proposal[(x, y)];
            if !(p >= 0.0) {
                return Err(Error::InvalidModel(format!("P[{x},{y}] = {p} is negative")));
            }
            if rho[y] > 0.0 && p == 0.0 {
                return Err(Error::InvalidModel(format!(
                    "P[{x},{y}] = 0 although rho[{y}] > 0 (proposal cannot reach the support)"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(Error::InvalidModel(format!("row {x} of P sums to {sum}")));
        }
    }

    let alpha = DMatrix::from_fn(g, g, |x, y| {
        let denom = rho[x] * proposal[(x, y)];
        if denom > 0.0 {
            (rho[y] * proposal[(y, x)] / denom).min(1.0)
        } else {
            1.0
        }
    });

    let mut k = DMatrix::zeros(g, g);
    for x in 0..g {
        let mut stay = 0.0;
        for y in 0..g {
            let p = proposal[(x, y)];
            k[(x, y)] += alpha[(x, y)] * p;
            stay += (1.0 - alpha[(x, y)]) * p;
        }
        k[(x, x)] += stay;
    }

    let n = g * g;
    let mut k_aug = DMatrix::zeros(n, n);
    let mut h = DMatrix::zeros(n, n);
    for x in 0..g {
        for y in 0..g {
            let i = pair(g, x, y);
            let a = alpha[(x, y)];
            for v in 0..g {
                k_aug[(i, pair(g, y, v))] += a * proposal[(y, v)];
                k_aug[(i, pair(g, x, v))] += (1.0 - a) * proposal[(x, v)];
            }
            h[(i, pair(g, y, x))] += a;
            h[(i, i)] += 1.0 - a;
        }
    }

    let mu = DVector::from_iterator(g, rho.iter().map(|r| r / total));
    let nu = DVector::from_fn(n, |i, _| mu[i / g] * proposal[(i / g, i % g)]);
    Ok(FiniteChainModel {
        g,
        rho: rho.to_vec(),
        proposal: proposal.clone(),
        alpha,
        k,
        k_aug,
        h,
        mu,
        nu,
    })
}

impl FiniteChainModel {
    /// Averaging over the proposal, `(P̂F)(x) = Σ_y P(x,y) F(x,y)`: a `g × g²` matrix.
    pub fn p_hat(&self) -> DMatrix<f64> {
        let g = self.g;
        DMatrix::from_fn(g, g * g, |x, i| if i / g == x { self.proposal[(x, i % g)] } else { 0.0 })
    }

    /// Lifting `(P̂*f)(x, y) = f(x)`: a `g² × g` matrix.
    pub fn p_hat_star(&self) -> DMatrix<f64> {
        let g = self.g;
        DMatrix::from_fn(g * g, g, |i, x| if i / g == x { 1.0 } else { 0.0 })
    }

    /// Max deviation of the row sums of `P`, `K`, `K_aug` and `H` from one.
    pub fn row_sum_residual(&self) -> f64 {
        [&self.proposal, &self.k, &self.k_aug, &self.h]
            .iter()
            .map(|m| {
                m.row_iter()
                    .map(|r| (r.sum() - 1.0).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// `‖νᵀK_aug − νᵀ‖_∞`.
pub fn check_stationarity_nu(model: &FiniteChainModel) -> f64 {
    let lhs = model.nu.transpose() * &model.k_aug;
    (lhs - model.nu.transpose()).amax()
}

/// `‖μᵀK − μᵀ‖_∞`.
pub fn check_stationarity_mu(model: &FiniteChainModel) -> f64 {
    let lhs = model.mu.transpose() * &model.k;
    (lhs - model.mu.transpose()).amax()
}

/// `max |π(x) T(x,y) − π(y) T(y,x)|`.
pub fn check_reversibility(matrix: &DMatrix<f64>, stationary: &DVector<f64>) -> Result<f64> {
    let n = matrix.nrows();
    if matrix.ncols() != n || stationary.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: stationary.len(),
        });
    }
    let mut worst = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            worst = worst.max((stationary[x] * matrix[(x, y)] - stationary[y] * matrix[(y, x)]).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorIdentityReport {
    /// `K = P̂ H P̂*`.
    pub k_factorization: f64,
    /// `K_aug = H P̂* P̂`.
    pub k_aug_factorization: f64,
    /// `K_augⁿ = H P̂* Kⁿ⁻¹ P̂` for `n = 2, 3`.
    pub k_aug_powers: f64,
    /// `Kⁿ = P̂ K_augⁿ⁻¹ H P̂*` for `n = 2, 3`.
    pub k_powers: f64,
    /// `diag(ν) H = Hᵀ diag(ν)`.
    pub h_self_adjoint: f64,
    /// `P̂ P̂* = I`.
    pub lifting_inverse: f64,
    /// `(P̂* P̂)² = P̂* P̂`.
    pub projection: f64,
    /// `diag(μ) P̂ = (P̂*)ᵀ diag(ν)`, i.e. `P̂*` is the adjoint of `P̂`.
    pub adjoint: f64,
}

impl OperatorIdentityReport {
    pub fn max(&self) -> f64 {
        [
            self.k_factorization,
            self.k_aug_factorization,
            self.k_aug_powers,
            self.k_powers,
            self.h_self_adjoint,
            self.lifting_inverse,
            self.projection,
            self.adjoint,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn check_operator_identities(model: &FiniteChainModel) -> OperatorIdentityReport {
    let ph = model.p_hat();
    let ps = model.p_hat_star();
    let h = &model.h;
    let k = &model.k;
    let ka = &model.k_aug;

    let lift_avg = &ps * &ph;
    let k_aug_powers = (2..=3)
        .map(|n| max_abs(&(pow(ka, n) - h * &ps * pow(k, n - 1) * &ph)))
        .fold(0.0, f64::max);
    let k_powers = (2..=3)
        .map(|n| max_abs(&(pow(k, n) - &ph * pow(ka, n - 1) * h * &ps)))
        .fold(0.0, f64::max);
    let w_nu = DMatrix::from_diagonal(&model.nu);
    let w_mu = DMatrix::from_diagonal(&model.mu);
    OperatorIdentityReport {
        k_factorization: max_abs(&(k - &ph * h * &ps)),
        k_aug_factorization: max_abs(&(ka - h * &lift_avg)),
        k_aug_powers,
        k_powers,
        h_self_adjoint: max_abs(&(&w_nu * h - h.transpose() * &w_nu)),
        lifting_inverse: max_abs(&(&ph * &ps - DMatrix::identity(model.g, model.g))),
        projection: max_abs(&(&lift_avg * &lift_avg - &lift_avg)),
        adjoint: max_abs(&(&w_mu * &ph - ps.transpose() * &w_nu)),
    }
}

fn pow(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..n {
        out = &out * m;
    }
    out
}

/// `D^{1/2} T D^{−1/2}` restricted to the support of `pi`, with the
/// projection onto the complement of `√π` applied on both sides. Its
/// Euclidean spectral properties are those of `T` on `L²₀(π)`.
fn mean_zero_similarity(t: &DMatrix<f64>, pi: &DVector<f64>) -> DMatrix<f64> {
    let support: Vec<usize> = (0..pi.len()).filter(|&i| pi[i] > 0.0).collect();
    let m = support.len();
    let sq: Vec<f64> = support.iter().map(|&i| pi[i].sqrt()).collect();
    let a = DMatrix::from_fn(m, m, |i, j| sq[i] * t[(support[i], support[j])] / sq[j]);
    let s = DVector::from_vec(sq);
    let proj = DMatrix::identity(m, m) - &s * s.transpose();
    &proj * a * &proj
}

/// Largest singular value, from the symmetric eigenproblem of `MᵀM`.
/// The dense SVD loses accuracy on matrices with many zero singular values.
fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    (m.transpose() * m).symmetric_eigenvalues().max().max(0.0).sqrt()
}

/// `‖T‖` on `L²₀(π)`.
pub fn mean_zero_norm(t: &DMatrix<f64>, pi: &DVector<f64>) -> f64 {
    spectral_norm(&mean_zero_similarity(t, pi))
}

/// Eigenvalues `(re, im)` of a matrix with a large null space. The operator
/// is compressed onto its range repeatedly until the rank stops dropping;
/// what remains is invertible and carries every nonzero eigenvalue, the rest
/// are exact zeros. This avoids the scatter that defective zero eigenvalues
/// cause in a direct dense eigensolve. The range basis comes from the
/// eigenvectors of `MMᵀ` whose eigenvalues exceed `(rank_tol · ‖M‖)²`.
pub fn range_restricted_eigenvalues(b: &DMatrix<f64>, rank_tol: f64) -> Result<Vec<(f64, f64)>> {
    let n = b.nrows();
    let cutoff = (rank_tol * spectral_norm(b).max(1.0)).powi(2);
    let mut core = b.clone();
    loop {
        let m = core.nrows();
        if m == 0 {
            break;
        }
        let eig = (&core * core.transpose()).symmetric_eigen();
        let keep: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
        if keep.len() == m {
            break;
        }
        let q = DMatrix::from_fn(m, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
        core = q.transpose() * &core * &q;
    }
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(n);
    if !core.is_empty() {
        let eig = core
            .try_schur(1e-14, 10_000)
            .ok_or_else(|| Error::Eigensolver("Schur iteration did not converge".into()))?
            .complex_eigenvalues();
        out.extend(eig.iter().map(|c| (c.re, c.im)));
    }
    out.resize(n, (0.0, 0.0));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    /// `‖K‖₀` on `L²₀(μ)`.
    pub k_norm: f64,
    pub k_aug_spectral_radius: f64,
    pub max_imaginary: f64,
    pub min_real: f64,
    /// Smallest eigenvalue of the self-adjoint `K` on `L²₀(μ)`.
    pub k_min_eigenvalue: f64,
    /// `max_n (‖Kⁿ‖₀ − ‖K_augⁿ⁻¹‖₀)` over `n = 2, 3`; non-positive when the
    /// norm ordering holds.
    pub power_norm_excess: f64,
}

impl SpectralReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_imaginary <= tol
            && self.min_real >= -tol
            && self.k_aug_spectral_radius <= self.k_norm + tol
            && self.power_norm_excess <= tol
    }
}

pub fn check_spectral_bounds(model: &FiniteChainModel) -> Result<SpectralReport> {
    if model.g > 50 {
        return Err(Error::InvalidArgument(format!(
            "dense spectral check limited to g ≤ 50, got {}",
            model.g
        )));
    }
    let a = mean_zero_similarity(&model.k, &model.mu);
    let b = mean_zero_similarity(&model.k_aug, &model.nu);
    let k_norm = spectral_norm(&a);
    let k_min_eigenvalue = a.symmetric_eigenvalues().min();
    let eig = range_restricted_eigenvalues(&b, 1e-7)?;
    let radius = eig.iter().map(|(r, i)| r.hypot(*i)).fold(0.0, f64::max);
    let max_imaginary = eig.iter().map(|(_, i)| i.abs()).fold(0.0, f64::max);
    let min_real = eig.iter().map(|(r, _)| *r).fold(f64::INFINITY, f64::min);
    let power_norm_excess = (2..=3)
        .map(|n| spectral_norm(&pow(&a, n)) - spectral_norm(&pow(&b, n - 1)))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectralReport {
        k_norm,
        k_aug_spectral_radius: radius,
        max_imaginary,
        min_real,
        k_min_eigenvalue,
        power_norm_excess,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicityReport {
    pub rate: f64,
    /// `max_n (d_TV(ν, η K_augⁿ) − C_η rⁿ)` over all starts and `n ≤ horizon`.
    pub worst_excess: f64,
    pub starts: usize,
}

/// Total-variation decay of `η K_augⁿ` towards `ν` against the bound
/// `C_η rⁿ`, `r = ‖K‖₀`, `C_η = ‖dη/dν − 1‖_{L²(ν)} / r`, for random bounded
/// densities `dη/dν`.
pub fn check_geometric_ergodicity(
    model: &FiniteChainModel,
    starts: usize,
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Result<ErgodicityReport> {
    let r = mean_zero_norm(&model.k, &model.mu);
    if !(r < 1.0) {
        return Err(Error::InvalidModel(format!("‖K‖₀ = {r} is not below one")));
    }
    let n = model.nu.len();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..starts {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
        let mass: f64 = raw.iter().zip(model.nu.iter()).map(|(h, v)| h * v).sum();
        let density: Vec<f64> = raw.iter().map(|h| h / mass).collect();
        let c_eta = density
            .iter()
            .zip(model.nu.iter())
            .map(|(h, v)| v * (h - 1.0) * (h - 1.0))
            .sum::<f64>()
            .sqrt()
            / r.max(f64::MIN_POSITIVE);
        let mut eta = DVector::from_fn(n, |i, _| density[i] * model.nu[i]).transpose();
        for step in 1..=horizon {
            eta = &eta * &model.k_aug;
            let tv = 0.5 * (&eta - model.nu.transpose()).abs().sum();
            let bound = if r > 0.0 { c_eta * r.powi(step as i32) } else { 0.0 };
            worst = worst.max(tv - bound);
        }
    }
    Ok(ErgodicityReport {
        rate: r,
        worst_excess: worst,
        starts,
    })
}

/// `Σ f(y) ρ̄(x,y) P(x,y) μ(x) / Σ ρ̄(x,y) P(x,y) μ(x) − E_μ(f)` with
/// `ρ̄(x,y) = ρ(y) / P(x,y)`, enumerated over all pairs.
pub fn importance_identity_residual(model: &FiniteChainModel, f: &[f64]) -> f64 {
    let g = model.g;
    let mut num = 0.0;
    let mut den = 0.0;
    for x in 0..g {
        for y in 0..g {
            let p = model.proposal[(x, y)];
            if p == 0.0 || model.rho[y] == 0.0 {
                continue;
            }
            let w = model.rho[y] / p * p * model.mu[x];
            num += w * f[y];
            den += w;
        }
    }
    let mean: f64 = model.mu.iter().zip(f).map(|(m, v)| m * v).sum();
    (num / den - mean).abs()
}

/// The two-state model with `ρ ≡ ½` and `P ≡ ½`, whose augmented kernel is
/// not reversible with respect to `ν`.
pub fn two_state_model() -> FiniteChainModel {
    build_finite_model(&[0.5, 0.5], &DMatrix::from_element(2, 2, 0.5))
        .expect("two-state model is valid")
}

/// A random valid model on `g` states. Some targets get a zero-mass state;
/// proposals alternate between dense random rows and discretized Gaussians.
pub fn random_model(g: usize, rng: &mut dyn RngCore) -> FiniteChainModel {
    let mut rho: Vec<f64> = (0..g).map(|_| rng.random_range(0.05..1.0)).collect();
    if g > 2 && rng.random_bool(0.3) {
        let z = rng.random_range(0..g);
        rho[z] = 0.0;
    }
    let gaussian = rng.random_bool(0.5);
    let width = rng.random_range(0.5..3.0);
    let mut p = DMatrix::from_fn(g, g, |x, y| {
        if gaussian {
            let d = x as f64 - y as f64;
            (-d * d / (2.0 * width * width)).exp()
        } else {
            0.0
        }
    });
    if !gaussian {
        for v in p.iter_mut() {
            *v = rng.random_range(0.02..1.0);
        }
    }
    for mut row in p.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    build_finite_model(&rho, &p).expect("random model is valid by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    Pass,
    /// A negative control: the check is meant to detect a violation.
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub expectation: Expectation,
}

impl CheckRow {
    /// For `Pass` rows the value must not exceed the tolerance; for `Fail`
    /// rows it must exceed it.
    pub fn ok(&self) -> bool {
        let within = self.value <= self.tolerance;
        match self.expectation {
            Expectation::Pass => within,
            Expectation::Fail => !within,
        }
    }

    pub fn status(&self) -> &'static str {
        match (self.expectation, self.ok()) {
            (Expectation::Pass, true) => "PASS",
            (Expectation::Fail, true) => "FAIL-as-expected",
            _ => "FAIL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
    pub models: usize,
    /// Models whose `K` has a negative eigenvalue on `L²₀(μ)`.
    pub negative_spectrum_models: usize,
}

impl VerifyReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(CheckRow::ok)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<44} {:>12} {:>10}  {}\n",
            "check", "worst", "tolerance", "status"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<44} {:>12.3e} {:>10.0e}  {}\n",
                r.name,
                r.value,
                r.tolerance,
                r.status()
            ));
        }
        out.push_str(&format!(
            "{} of {} models have a negative eigenvalue of K on L2_0(mu)\n",
            self.negative_spectrum_models, self.models
        ));
        out
    }
}

/// Run every check on `n_models` random models with `g ∈ 2..=max_g`, plus
/// the two-state non-reversibility example and a mutant negative control.
pub fn run_verify_suite(n_models: usize, max_g: usize, rng: &mut dyn RngCore) -> Result<VerifyReport> {
    let mut worst = [0.0f64; 9];
    let mut negative_models = 0;
    for _ in 0..n_models {
        let g = rng.random_range(2..=max_g.max(2));
        let m = random_model(g, rng);
        let f: Vec<f64> = (0..g).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bounds = check_spectral_bounds(&m)?;
        let erg = check_geometric_ergodicity(&m, 10, 30, rng)?;
        // A negative eigenvalue of K_aug on the mean-zero subspace must be
        // one of K's; MH kernels are not positive operators in general.
        let negative = bounds.min_real < -1e-8;
        negative_models += usize::from(negative);
        let unexplained = if negative { (bounds.min_real - bounds.k_min_eigenvalue).abs() } else { 0.0 };
        let vals = [
            m.row_sum_residual(),
            check_stationarity_nu(&m),
            check_reversibility(&m.k, &m.mu)?,
            check_operator_identities(&m).max(),
            bounds.max_imaginary.max(-bounds.min_real),
            (bounds.k_aug_spectral_radius - bounds.k_norm).max(bounds.power_norm_excess).max(0.0),
            erg.worst_excess.max(0.0),
            importance_identity_residual(&m, &f),
            unexplained,
        ];
        for (w, v) in worst.iter_mut().zip(vals) {
            *w = w.max(v);
        }
    }
    let names = [
        ("row sums of P, K, K_aug, H", 1e-12),
        ("stationarity of nu under K_aug", 1e-12),
        ("detailed balance of K w.r.t. mu", 1e-12),
        ("operator identities", 1e-10),
        ("K_aug mean-zero spectrum real, >= 0", 1e-8),
        ("K_aug radius and power norms vs ||K||_0", 1e-8),
        ("geometric ergodicity bound (n <= 30)", 1e-12),
        ("importance weights recover E_mu(f)", 1e-12),
        ("negative K_aug eigenvalues are K's", 1e-8),
    ];
    let mut rows: Vec<CheckRow> = names
        .iter()
        .zip(worst)
        .map(|(&(name, tolerance), value)| CheckRow {
            name: name.to_string(),
            value,
            tolerance,
            expectation: Expectation::Pass,
        })
        .collect();

    let two = two_state_model();
    rows.push(CheckRow {
        name: "two-state K_aug reversibility w.r.t. nu".into(),
        value: check_reversibility(&two.k_aug, &two.nu)?,
        tolerance: 0.05,
        expectation: Expectation::Fail,
    });
    let mutant = unadjusted_mutant();
    rows.push(CheckRow {
        name: "mutant (no MH correction) detailed balance".into(),
        value: check_reversibility(&mutant.k, &mutant.mu)?,
        tolerance: 1e-12,
        expectation: Expectation::Fail,
    });
    Ok(VerifyReport {
        rows,
        models: n_models,
        negative_spectrum_models: negative_models,
    })
}

/// A model whose `K` is replaced by the raw proposal, breaking detailed
/// balance on a non-uniform target.
fn unadjusted_mutant() -> FiniteChainModel {
    let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.3, 0.3, 0.4, 0.5, 0.25, 0.25]);
    let mut m = build_finite_model(&[0.2, 0.5, 0.3], &p).expect("valid");
    m.k = p;
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::RngStream;

    #[test]
    fn two_state_augmented_kernel() {
        let m = two_state_model();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let expect = if j == k { 0.5 } else { 0.0 };
                        assert_eq!(m.k_aug[(pair(2, i, j), pair(2, k, l))], expect);
                    }
                }
            }
        }
        assert!(check_stationarity_nu(&m) <= 1e-15);
        // (1,1) → (2,1) is impossible while (2,1) → (1,1) has probability ½.
        let asym = check_reversibility(&m.k_aug, &m.nu).unwrap();
        assert!((asym - 0.125).abs() < 1e-15);
        let ids = check_operator_identities(&m);
        assert!(ids.k_aug_powers <= 1e-14);
    }

    #[test]
    fn uniform_symmetric_accepts_everything() {
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]);
        let m = build_finite_model(&[1.0, 1.0, 1.0], &p).unwrap();
        assert!(max_abs(&(&m.k - &p)) < 1e-15);
    }

    #[test]
    fn identity_proposal_is_rejected() {
        let err = build_finite_model(&[1.0, 2.0], &DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn independence_uniform_has_zero_norm() {
        let p = DMatrix::from_element(4, 4, 0.25);
        let m = build_finite_model(&[1.0; 4], &p).unwrap();
        let s = check_spectral_bounds(&m).unwrap();
        assert!(s.k_norm < 1e-12);
        assert!(s.holds(1e-8));
    }

    #[test]
    fn symmetric_doubly_stochastic_is_reversible() {
        let t = DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.5, 0.3, 0.4, 0.3, 0.5, 0.3, 0.2]);
        let pi = DVector::from_element(3, 1.0 / 3.0);
        assert_eq!(check_reversibility(&t, &pi).unwrap(), 0.0);
    }

    #[test]
    fn random_g3_rows_sum_to_one() {
        let mut rng = RngStream::new(3, 0);
        let m = random_model(3, &mut rng);
        assert!(m.row_sum_residual() <= 1e-12);
    }

    #[test]
    fn two_state_augmented_spectrum_is_nonnegative() {
        let s = check_spectral_bounds(&two_state_model()).unwrap();
        assert!(s.holds(1e-8), "{s:?}");
    }

    #[test]
    fn swap_proposal_gives_negative_augmented_eigenvalue() {
        // Uniform target, proposal that mostly swaps: K = P with eigenvalue
        // -0.8 on the mean-zero subspace, and K_aug inherits it.
        let p = DMatrix::from_row_slice(2, 2, &[0.1, 0.9, 0.9, 0.1]);
        let m = build_finite_model(&[0.5, 0.5], &p).unwrap();
        let s = check_spectral_bounds(&m).unwrap();
        assert!((s.k_min_eigenvalue + 0.8).abs() < 1e-12);
        assert!((s.min_real + 0.8).abs() < 1e-8, "{s:?}");
        assert!(s.max_imaginary < 1e-8);
        assert!(s.k_aug_spectral_radius <= s.k_norm + 1e-8);
    }

    #[test]
    fn suite_rows_hold_except_positivity() {
        let mut rng = RngStream::new(1, 0);
        let rep = run_verify_suite(40, 6, &mut rng).unwrap();
        for r in &rep.rows {
            if r.name.contains(">= 0") {
                assert_eq!(r.ok(), rep.negative_spectrum_models == 0, "{}", rep.table());
            } else {
                assert!(r.ok(), "{}", rep.table());
            }
        }
    }
}

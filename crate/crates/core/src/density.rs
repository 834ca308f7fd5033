//! Target and proposal contracts, random streams and log-domain helpers.
//!
//! Densities are handled in log space throughout: `ρ(x) = 0` is represented
//! as `log ρ(x) = −∞`. Targets are densities w.r.t. Lebesgue measure; any
//! prior is folded into the target, so the proposal densities used for the
//! importance weights are Lebesgue densities as well.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{self, Cholesky};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Unnormalized log-density `log ρ` on ℝᵈ with an optional gradient.
pub trait TargetDensity: Sync {
    fn dim(&self) -> usize;

    /// `log ρ(x)`, `−∞` where ρ vanishes. Never NaN for finite `x`.
    fn log_density(&self, x: &[f64]) -> f64;

    fn has_gradient(&self) -> bool {
        false
    }

    /// `log ρ(x)` together with `∇ log ρ(x)` when requested and available.
    /// Counts as a single evaluation of ρ.
    fn evaluate(&self, x: &[f64], with_gradient: bool) -> (f64, Option<Vec<f64>>) {
        let _ = with_gradient;
        (self.log_density(x), None)
    }

    fn grad_log_density(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.evaluate(x, true).1
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }
    fn has_gradient(&self) -> bool {
        (**self).has_gradient()
    }
    fn evaluate(&self, x: &[f64], with_gradient: bool) -> (f64, Option<Vec<f64>>) {
        (**self).evaluate(x, with_gradient)
    }
}

type LogFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Target built from closures.
pub struct FnTarget {
    dim: usize,
    log_fn: LogFn,
    grad_fn: Option<GradFn>,
}

impl FnTarget {
    pub fn new(dim: usize, log_fn: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            log_fn: Box::new(log_fn),
            grad_fn: None,
        }
    }

    pub fn with_gradient(
        mut self,
        grad_fn: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad_fn = Some(Box::new(grad_fn));
        self
    }
}

impl TargetDensity for FnTarget {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_fn)(x)
    }
    fn has_gradient(&self) -> bool {
        self.grad_fn.is_some()
    }
    fn evaluate(&self, x: &[f64], with_gradient: bool) -> (f64, Option<Vec<f64>>) {
        let lp = (self.log_fn)(x);
        let grad = match (&self.grad_fn, with_gradient) {
            (Some(g), true) if lp > f64::NEG_INFINITY => Some(g(x)),
            _ => None,
        };
        (lp, grad)
    }
}

/// Wraps a target and counts evaluations of ρ (value and fused
/// value-plus-gradient calls count once each).
pub struct CountingTarget<T> {
    inner: T,
    count: AtomicU64,
}

impl<T: TargetDensity> CountingTarget<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn evaluations(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<T: TargetDensity> TargetDensity for CountingTarget<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.log_density(x)
    }
    fn has_gradient(&self) -> bool {
        self.inner.has_gradient()
    }
    fn evaluate(&self, x: &[f64], with_gradient: bool) -> (f64, Option<Vec<f64>>) {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(x, with_gradient)
    }
}

/// `log ρ + c`: the same distribution with a different unknown normalizer.
pub struct ShiftedTarget<T> {
    pub inner: T,
    pub shift: f64,
}

impl<T: TargetDensity> TargetDensity for ShiftedTarget<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.inner.log_density(x) + self.shift
    }
    fn has_gradient(&self) -> bool {
        self.inner.has_gradient()
    }
    fn evaluate(&self, x: &[f64], with_gradient: bool) -> (f64, Option<Vec<f64>>) {
        let (lp, g) = self.inner.evaluate(x, with_gradient);
        (lp + self.shift, g)
    }
}

/// Borrowed view of a chain state: its position and, for gradient-based
/// proposals, `∇ log ρ` at that position.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    pub position: &'a [f64],
    pub grad: Option<&'a [f64]>,
}

impl<'a> StateView<'a> {
    pub fn at(position: &'a [f64]) -> Self {
        Self {
            position,
            grad: None,
        }
    }
}

/// An evaluated state: position, `log ρ` and optionally its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub grad: Option<Vec<f64>>,
}

impl Point {
    pub fn evaluate<T: TargetDensity + ?Sized>(
        target: &T,
        position: Vec<f64>,
        with_gradient: bool,
    ) -> Self {
        let (log_density, grad) = target.evaluate(&position, with_gradient);
        Self {
            position,
            log_density,
            grad,
        }
    }

    pub fn view(&self) -> StateView<'_> {
        StateView {
            position: &self.position,
            grad: self.grad.as_deref(),
        }
    }
}

/// Which family a proposal belongs to; selects the calibration functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    RandomWalk,
    Mala,
}

/// Proposal kernel `P_s(x, ·)` with density `p_s(x, ·)` w.r.t. Lebesgue measure.
pub trait ProposalKernel: Sync {
    fn dim(&self) -> usize;
    fn stepsize(&self) -> f64;
    fn kind(&self) -> ProposalKind;

    /// Whether `sample`/`log_density` need `∇ log ρ` at the origin state.
    fn needs_gradient(&self) -> bool {
        false
    }

    fn sample(&self, from: StateView<'_>, rng: &mut dyn RngCore) -> Vec<f64>;

    /// `log p_s(x, y)`.
    fn log_density(&self, from: StateView<'_>, to: &[f64]) -> f64;

    /// `(d/ds p_s(x,y)) / p_s(x,y)`.
    fn stepsize_score(&self, from: StateView<'_>, to: &[f64]) -> Option<f64>;

    /// The pair `(a, b)` with `s · score = a / s² − b`, so that the stepsize
    /// optimality condition reads `s² = Σ w a / Σ w b`.
    fn fixed_point_terms(&self, from: StateView<'_>, to: &[f64]) -> (f64, f64);

    /// For kernels of the form `N(m(x), s² C)`: the factor of `C`. Together
    /// with [`ProposalKernel::gaussian_mean`] this lets mixture sums over many
    /// origins be evaluated in whitened coordinates.
    fn covariance_factor(&self) -> Option<&Cholesky> {
        None
    }

    fn gaussian_mean(&self, from: StateView<'_>) -> Option<Vec<f64>> {
        let _ = from;
        None
    }
}

/// Gaussian random walk `N(x, s² C)`.
#[derive(Debug, Clone)]
pub struct GaussianRandomWalk {
    stepsize: f64,
    chol: Cholesky,
    log_norm: f64,
}

impl GaussianRandomWalk {
    /// `cov` is the row-major `dim × dim` matrix C.
    pub fn new(dim: usize, stepsize: f64, cov: &[f64]) -> Result<Self> {
        let chol = Cholesky::new(cov, dim)?;
        Self::from_cholesky(stepsize, chol)
    }

    pub fn isotropic(dim: usize, stepsize: f64) -> Result<Self> {
        Self::from_cholesky(stepsize, Cholesky::identity(dim))
    }

    pub fn from_cholesky(stepsize: f64, chol: Cholesky) -> Result<Self> {
        check_stepsize(stepsize)?;
        let d = chol.dim() as f64;
        let log_norm = -0.5 * (d * LN_2PI + chol.log_det());
        Ok(Self {
            stepsize,
            chol,
            log_norm,
        })
    }

    pub fn with_stepsize(&self, stepsize: f64) -> Result<Self> {
        Self::from_cholesky(stepsize, self.chol.clone())
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    /// `|y − x|²_C`.
    pub fn mahalanobis_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        let diff: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        self.chol.mahalanobis_sq(&diff)
    }
}

fn check_stepsize(s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "stepsize must be positive and finite, got {s}"
        )))
    }
}

fn standard_normal_vec(dim: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

impl ProposalKernel for GaussianRandomWalk {
    fn dim(&self) -> usize {
        self.chol.dim()
    }

    fn stepsize(&self) -> f64 {
        self.stepsize
    }

    fn kind(&self) -> ProposalKind {
        ProposalKind::RandomWalk
    }

    fn sample(&self, from: StateView<'_>, rng: &mut dyn RngCore) -> Vec<f64> {
        let d = self.dim();
        let xi = standard_normal_vec(d, rng);
        let mut step = vec![0.0; d];
        self.chol.mul_lower(&xi, &mut step);
        from.position
            .iter()
            .zip(&step)
            .map(|(x, z)| x + self.stepsize * z)
            .collect()
    }

    fn log_density(&self, from: StateView<'_>, to: &[f64]) -> f64 {
        let s = self.stepsize;
        let q = self.mahalanobis_sq(from.position, to);
        -(self.dim() as f64) * s.ln() + self.log_norm - q / (2.0 * s * s)
    }

    fn stepsize_score(&self, from: StateView<'_>, to: &[f64]) -> Option<f64> {
        let s = self.stepsize;
        let q = self.mahalanobis_sq(from.position, to);
        Some(-(self.dim() as f64) / s + q / (s * s * s))
    }

    fn fixed_point_terms(&self, from: StateView<'_>, to: &[f64]) -> (f64, f64) {
        (self.mahalanobis_sq(from.position, to), self.dim() as f64)
    }

    fn covariance_factor(&self) -> Option<&Cholesky> {
        Some(&self.chol)
    }

    fn gaussian_mean(&self, from: StateView<'_>) -> Option<Vec<f64>> {
        Some(from.position.to_vec())
    }
}

/// Metropolis-adjusted Langevin proposal
/// `N(x + (s²/2) C ∇log ρ(x), s² C)`; `C = I` unless a preconditioner is given.
#[derive(Debug, Clone)]
pub struct Mala {
    stepsize: f64,
    chol: Cholesky,
    log_norm: f64,
}

impl Mala {
    pub fn new<T: TargetDensity + ?Sized>(target: &T, stepsize: f64) -> Result<Self> {
        Self::with_cholesky(target, stepsize, Cholesky::identity(target.dim()))
    }

    pub fn with_preconditioner<T: TargetDensity + ?Sized>(
        target: &T,
        stepsize: f64,
        cov: &[f64],
    ) -> Result<Self> {
        Self::with_cholesky(target, stepsize, Cholesky::new(cov, target.dim())?)
    }

    pub fn with_cholesky<T: TargetDensity + ?Sized>(
        target: &T,
        stepsize: f64,
        chol: Cholesky,
    ) -> Result<Self> {
        if !target.has_gradient() {
            return Err(Error::MissingGradient);
        }
        if chol.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: chol.dim(),
            });
        }
        check_stepsize(stepsize)?;
        let d = chol.dim() as f64;
        let log_norm = -0.5 * (d * LN_2PI + chol.log_det());
        Ok(Self {
            stepsize,
            chol,
            log_norm,
        })
    }

    pub fn with_stepsize(&self, stepsize: f64) -> Result<Self> {
        check_stepsize(stepsize)?;
        Ok(Self {
            stepsize,
            ..self.clone()
        })
    }

    /// The proposal mean `m_s(x)`.
    pub fn mean(&self, from: StateView<'_>) -> Vec<f64> {
        let grad = from
            .grad
            .expect("MALA proposal requires the gradient at the current state");
        let mut drift = vec![0.0; self.dim()];
        self.chol.mul_matrix(grad, &mut drift);
        let h = 0.5 * self.stepsize * self.stepsize;
        from.position
            .iter()
            .zip(&drift)
            .map(|(x, g)| x + h * g)
            .collect()
    }

    fn residual(&self, from: StateView<'_>, to: &[f64]) -> Vec<f64> {
        let m = self.mean(from);
        to.iter().zip(&m).map(|(y, m)| y - m).collect()
    }
}

impl ProposalKernel for Mala {
    fn dim(&self) -> usize {
        self.chol.dim()
    }

    fn stepsize(&self) -> f64 {
        self.stepsize
    }

    fn kind(&self) -> ProposalKind {
        ProposalKind::Mala
    }

    fn needs_gradient(&self) -> bool {
        true
    }

    fn sample(&self, from: StateView<'_>, rng: &mut dyn RngCore) -> Vec<f64> {
        let d = self.dim();
        let m = self.mean(from);
        let xi = standard_normal_vec(d, rng);
        let mut step = vec![0.0; d];
        self.chol.mul_lower(&xi, &mut step);
        m.iter()
            .zip(&step)
            .map(|(m, z)| m + self.stepsize * z)
            .collect()
    }

    fn log_density(&self, from: StateView<'_>, to: &[f64]) -> f64 {
        let s = self.stepsize;
        let q = self.chol.mahalanobis_sq(&self.residual(from, to));
        -(self.dim() as f64) * s.ln() + self.log_norm - q / (2.0 * s * s)
    }

    fn stepsize_score(&self, from: StateView<'_>, to: &[f64]) -> Option<f64> {
        let s = self.stepsize;
        let r = self.residual(from, to);
        let q = self.chol.mahalanobis_sq(&r);
        let g = linalg::dot(&r, from.grad?);
        Some(-(self.dim() as f64) / s + q / (s * s * s) + g / s)
    }

    fn fixed_point_terms(&self, from: StateView<'_>, to: &[f64]) -> (f64, f64) {
        let r = self.residual(from, to);
        let q = self.chol.mahalanobis_sq(&r);
        let g = linalg::dot(&r, from.grad.expect("gradient"));
        (q, self.dim() as f64 - g)
    }

    fn covariance_factor(&self) -> Option<&Cholesky> {
        Some(&self.chol)
    }

    fn gaussian_mean(&self, from: StateView<'_>) -> Option<Vec<f64>> {
        Some(self.mean(from))
    }
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Distinct stream ids select disjoint ChaCha streams under the same key, so
/// replicate chains seeded with one seed and consecutive ids are independent.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `log Σ exp(vᵢ)` with a max shift. Empty or all-`−∞` input gives `−∞`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if v.is_nan() {
            return Err(Error::NaN("log_sum_exp input"));
        }
        max = max.max(v);
    }
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if max == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Central finite difference of a scalar function along coordinate `i` with
/// step `h = 1e−5 · max(1, |xᵢ|)`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let h = 1e-5 * x[i].abs().max(1.0);
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|i| central_difference(&f, x, i)).collect()
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

//! Stepsize calibration for the importance sampling estimator.
//!
//! The asymptotic variance `V(s)` of `Aₙ(f)` is stationary where
//! `s² = J_f(s)`, with `J_f` a ratio of residual- and weight-weighted
//! moments of the proposal displacement. [`calibrate_stepsize`] locates that
//! fixed point from pilot chains; [`quadrature_v`] computes `V(s)` directly
//! for one- and two-dimensional targets.

use std::io::Write;

use rayon::prelude::*;

use crate::density::{Point, ProposalKernel, RngStream, TargetDensity};
use crate::estimators::{estimate_s, normalized_weights, Functional};
use crate::problems::gauss_legendre;
use crate::sampler::{acceptance_rate, run_chain, AugmentedChainRecord, ChainRunConfig};
use crate::{Error, Result};

pub type ProposalFactory<'a> = dyn Fn(f64) -> Result<Box<dyn ProposalKernel>> + Sync + 'a;

/// Weighted sums `(Σ cₖ ρ̄ₖ² aₖ, Σ cₖ ρ̄ₖ² bₖ, Σ cₖ ρ̄ₖ² |bₖ|)` with `(aₖ, bₖ)`
/// the proposal's fixed-point terms and `cₖ` optional per-record residual
/// weights.
fn fixed_point_sums<P: ProposalKernel + ?Sized>(
    records: &[AugmentedChainRecord],
    proposal: &P,
    residuals: Option<&[f64]>,
) -> Result<(f64, f64, f64)> {
    let lw: Vec<f64> = records.iter().map(|r| r.log_weight).collect();
    let (w, _) = normalized_weights(&lw)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut abs_den = 0.0;
    for (k, (r, wk)) in records.iter().zip(&w).enumerate() {
        let c = residuals.map_or(1.0, |res| res[k]) * wk * wk;
        if c == 0.0 {
            continue;
        }
        let (a, b) = proposal.fixed_point_terms(r.x_view(), &r.y);
        num += c * a;
        den += c * b;
        abs_den += c * b.abs();
    }
    Ok((num, den, abs_den))
}

fn fixed_point_ratio<P: ProposalKernel + ?Sized>(
    records: &[AugmentedChainRecord],
    proposal: &P,
    residuals: Option<&[f64]>,
) -> Result<f64> {
    let (num, den, _) = fixed_point_sums(records, proposal, residuals)?;
    if den == 0.0 {
        return Err(Error::DegenerateFunctional);
    }
    Ok(num / den)
}

/// Squared residuals `|f(Yₖ) − Sₙ(f)|²` summed over the components of `f`.
fn squared_residuals(records: &[AugmentedChainRecord], f: &Functional) -> Result<Vec<f64>> {
    let s = estimate_s(records, f)?.value;
    let mut buf = vec![0.0; f.dim_out];
    Ok(records
        .iter()
        .map(|r| {
            f.eval_into(&r.y, &mut buf);
            buf.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum()
        })
        .collect())
}

/// The empirical functional `J_f(s)` of a chain run with `proposal`.
pub fn empirical_j_f<P: ProposalKernel + ?Sized>(
    records: &[AugmentedChainRecord],
    f: &Functional,
    proposal: &P,
) -> Result<f64> {
    let res = squared_residuals(records, f)?;
    if res.iter().all(|&r| r == 0.0) {
        return Err(Error::DegenerateFunctional);
    }
    fixed_point_ratio(records, proposal, Some(&res))
}

/// The residual `(s² Σ cₖ ρ̄ₖ² bₖ − Σ cₖ ρ̄ₖ² aₖ) / Σ cₖ ρ̄ₖ² |bₖ|` whose sign
/// change locates the calibrated stepsize. It equals `s² − J_f(s)` when
/// every `bₖ > 0` (always for random walks). For MALA the `bₖ` can be
/// negative, `J_f` then has poles where its denominator vanishes, and this
/// form stays continuous with the sign of the estimated `dV/ds`.
pub fn empirical_fixed_point_residual<P: ProposalKernel + ?Sized>(
    records: &[AugmentedChainRecord],
    f: &Functional,
    proposal: &P,
) -> Result<f64> {
    let res = squared_residuals(records, f)?;
    if res.iter().all(|&r| r == 0.0) {
        return Err(Error::DegenerateFunctional);
    }
    let (num, den, abs_den) = fixed_point_sums(records, proposal, Some(&res))?;
    if abs_den == 0.0 {
        return Err(Error::DegenerateFunctional);
    }
    let s = proposal.stepsize();
    Ok((s * s * den - num) / abs_den)
}

/// The `f`-independent functional `J(s)`.
pub fn empirical_j<P: ProposalKernel + ?Sized>(
    records: &[AugmentedChainRecord],
    proposal: &P,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("empirical_j records"));
    }
    fixed_point_ratio(records, proposal, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub s_lo: f64,
    pub s_hi: f64,
    /// Points of the initial log-spaced scan of the bracket.
    pub grid_points: usize,
    pub pilot_steps: usize,
    pub pilot_burn_in: usize,
    /// Stop when `|g(s)| / s² < tol`.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub initial_state: Vec<f64>,
}

impl CalibrationConfig {
    pub fn new(s_lo: f64, s_hi: f64, initial_state: Vec<f64>) -> Self {
        Self {
            s_lo,
            s_hi,
            grid_points: 9,
            pilot_steps: 20_000,
            pilot_burn_in: 1_000,
            tol: 0.05,
            max_iters: 30,
            seed: 0,
            stream_id: 0,
            initial_state,
        }
    }
}

/// One evaluation of the fixed-point map at a stepsize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointEvaluation {
    pub j_f: f64,
    pub j: f64,
    pub acceptance_rate: f64,
    /// The root-search residual; `s² − J_f(s)` when absent.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationStep {
    pub iter: usize,
    pub s: f64,
    pub j_f: f64,
    pub j: f64,
    pub acceptance_rate: f64,
    /// Root-search residual, `s² − J_f(s)` unless the evaluator supplies one.
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationState {
    pub s_current: f64,
    pub j_f_value: f64,
    pub j_value: f64,
    /// `g` at `s_current`.
    pub g_value: f64,
    pub converged: bool,
    /// Every evaluation in order, scan points first.
    pub history: Vec<CalibrationStep>,
    /// All brackets `(s_left, s_right)` of the scan on which `g` changes sign.
    pub sign_changes: Vec<(f64, f64)>,
}

impl CalibrationState {
    /// Write the audit log with columns `iter, s, J_f, J, acceptance_rate, g`.
    pub fn write_audit_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iter", "s", "J_f", "J", "acceptance_rate", "g"])?;
        for h in &self.history {
            w.write_record([
                h.iter.to_string(),
                h.s.to_string(),
                h.j_f.to_string(),
                h.j.to_string(),
                h.acceptance_rate.to_string(),
                h.g.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let mut g: Vec<f64> = (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

fn step(iter: usize, s: f64, e: FixedPointEvaluation) -> CalibrationStep {
    CalibrationStep {
        iter,
        s,
        j_f: e.j_f,
        j: e.j,
        acceptance_rate: e.acceptance_rate,
        g: e.residual.unwrap_or(s * s - e.j_f),
    }
}

/// Root search for `g(s)` (by default `s² − J_f(s)`) given any evaluator of the fixed-point
/// map: a log-grid scan of the bracket, then geometric bisection of the first
/// sign change from negative to positive (the one at a minimum of `V`; any
/// other sign change is used only when none of that kind exists).
pub fn calibrate_with(
    eval: impl Fn(f64) -> Result<FixedPointEvaluation> + Sync,
    config: &CalibrationConfig,
) -> Result<CalibrationState> {
    if !(config.s_lo > 0.0 && config.s_hi > config.s_lo && config.s_hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "stepsize bracket [{}, {}] is invalid",
            config.s_lo, config.s_hi
        )));
    }
    if config.grid_points < 2 {
        return Err(Error::InvalidArgument("calibration scan needs at least 2 points".into()));
    }
    let grid = log_grid(config.s_lo, config.s_hi, config.grid_points);
    let evals: Vec<FixedPointEvaluation> = grid
        .par_iter()
        .map(|&s| eval(s))
        .collect::<Result<_>>()?;
    let mut history: Vec<CalibrationStep> = grid
        .iter()
        .zip(&evals)
        .enumerate()
        .map(|(i, (&s, &e))| step(i, s, e))
        .collect();

    let mut sign_changes = Vec::new();
    let mut preferred = None;
    let mut fallback = None;
    for (i, w) in history.windows(2).enumerate() {
        let (a, b) = (w[0].g, w[1].g);
        if a.signum() != b.signum() || a == 0.0 || b == 0.0 {
            sign_changes.push((w[0].s, w[1].s));
            if a <= 0.0 && b >= 0.0 {
                preferred.get_or_insert(i);
            } else {
                fallback.get_or_insert(i);
            }
        }
    }
    let Some(i) = preferred.or(fallback) else {
        return Err(Error::NoSignChange {
            samples: history.iter().map(|h| (h.s, h.g)).collect(),
        });
    };
    let (mut lo, mut hi) = (history[i].clone(), history[i + 1].clone());
    let rising = lo.g <= 0.0;

    let within = |h: &CalibrationStep| (h.g / (h.s * h.s)).abs() < config.tol;
    let mut best = if (lo.g / (lo.s * lo.s)).abs() <= (hi.g / (hi.s * hi.s)).abs() {
        lo
    } else {
        hi
    };
    let mut converged = within(&best);
    let mut iter = history.len();
    let last = iter + config.max_iters;
    while !converged && iter < last {
        let mid = (lo.s * hi.s).sqrt();
        let h = step(iter, mid, eval(mid)?);
        history.push(h);
        iter += 1;
        if (h.g / (h.s * h.s)).abs() < (best.g / (best.s * best.s)).abs() {
            best = h;
        }
        if within(&h) {
            best = h;
            converged = true;
            break;
        }
        if (h.g <= 0.0) == rising {
            lo = h;
        } else {
            hi = h;
        }
    }
    Ok(CalibrationState {
        s_current: best.s,
        j_f_value: best.j_f,
        j_value: best.j,
        g_value: best.g,
        converged,
        history,
        sign_changes,
    })
}

/// Calibrate the stepsize of `factory(s)` for `Aₙ(f)` on `target`. Every
/// evaluation of `J_f(s)` runs a fresh pilot chain from the same random
/// stream, so `g(s)` is a deterministic function of `s`.
pub fn calibrate_stepsize<T: TargetDensity + ?Sized>(
    target: &T,
    factory: &ProposalFactory<'_>,
    f: &Functional,
    config: &CalibrationConfig,
) -> Result<CalibrationState> {
    let eval = |s: f64| -> Result<FixedPointEvaluation> {
        let proposal = factory(s)?;
        let chain_cfg = ChainRunConfig::new(config.pilot_steps, config.initial_state.clone())
            .with_burn_in(config.pilot_burn_in);
        let mut rng = RngStream::new(config.seed, config.stream_id);
        let chain = run_chain(target, proposal.as_ref(), &chain_cfg, &mut rng)?;
        Ok(FixedPointEvaluation {
            j_f: empirical_j_f(&chain.records, f, proposal.as_ref())?,
            j: empirical_j(&chain.records, proposal.as_ref())?,
            acceptance_rate: acceptance_rate(&chain.records)?,
            residual: Some(empirical_fixed_point_residual(&chain.records, f, proposal.as_ref())?),
        })
    };
    let state = calibrate_with(eval, config)?;
    if state.sign_changes.len() > 1 {
        log::warn!(
            "s² − J_f(s) changes sign on {} scan intervals: {:?}",
            state.sign_changes.len(),
            state.sign_changes
        );
    }
    Ok(state)
}

/// Bisection on the stepsize for a target acceptance rate (0.234 in high
/// dimension, 0.44 in one), the classical tuning rule for `Sₙ`.
pub fn calibrate_acceptance_rate<T: TargetDensity + ?Sized>(
    target: &T,
    factory: &ProposalFactory<'_>,
    target_rate: f64,
    config: &CalibrationConfig,
) -> Result<f64> {
    let rate = |s: f64| -> Result<f64> {
        let proposal = factory(s)?;
        let cfg = ChainRunConfig::new(config.pilot_steps, config.initial_state.clone())
            .with_burn_in(config.pilot_burn_in);
        let chain = run_chain(target, proposal.as_ref(), &cfg, &mut RngStream::new(config.seed, config.stream_id))?;
        acceptance_rate(&chain.records)
    };
    let (mut lo, mut hi) = (config.s_lo, config.s_hi);
    for _ in 0..config.max_iters {
        let mid = (lo * hi).sqrt();
        let r = rate(mid)?;
        if (r - target_rate).abs() < 0.005 {
            return Ok(mid);
        }
        // Acceptance falls as the stepsize grows.
        if r > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Tensor Gauss–Legendre box for the double integrals over `(x, y)`: each
/// coordinate spans `center ± half_width · scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureBox {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub half_width: f64,
    pub nodes_per_dim: usize,
}

impl QuadratureBox {
    pub fn standard(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
            half_width: 10.0,
            nodes_per_dim: 64,
        }
    }
}

fn box_nodes(bx: &QuadratureBox, n: usize, widen: f64) -> Vec<(Vec<f64>, f64)> {
    let d = bx.center.len();
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
        .map(|i| {
            let h = bx.half_width * widen * bx.scale[i];
            gauss_legendre(n, bx.center[i] - h, bx.center[i] + h)
        })
        .collect();
    let mut out = Vec::with_capacity(n.pow(d as u32));
    let mut idx = vec![0usize; d];
    loop {
        let point: Vec<f64> = (0..d).map(|i| axes[i].0[idx[i]]).collect();
        let weight: f64 = (0..d).map(|i| axes[i].1[idx[i]]).product();
        out.push((point, weight));
        let mut k = d;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// `∫∫ h(x, y) μ(y)² μ(x) / p(x, y) dx dy` for the normalized target `μ`, on a
/// fixed node set. Also returns `E_μ` of `center_fn` for centering.
fn weighted_double_integral<T: TargetDensity + ?Sized, P: ProposalKernel + ?Sized>(
    target: &T,
    proposal: &P,
    nodes: &[(Vec<f64>, f64)],
    h: &(dyn Fn(&[f64], &[f64]) -> f64 + Sync),
) -> Result<f64> {
    let needs_grad = proposal.needs_gradient();
    let points: Vec<Point> = nodes
        .iter()
        .map(|(u, _)| Point::evaluate(target, u.clone(), needs_grad))
        .collect();
    let max_lp = points
        .iter()
        .map(|p| p.log_density)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_lp == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    let log_z = (nodes
        .iter()
        .zip(&points)
        .map(|((_, w), p)| w * (p.log_density - max_lp).exp())
        .sum::<f64>())
    .ln()
        + max_lp;
    let total: f64 = points
        .par_iter()
        .zip(nodes.par_iter())
        .map(|(px, (_, wx))| {
            if px.log_density == f64::NEG_INFINITY {
                return 0.0;
            }
            let mut acc = 0.0;
            for (py, (_, wy)) in points.iter().zip(nodes) {
                if py.log_density == f64::NEG_INFINITY {
                    continue;
                }
                let lp = proposal.log_density(px.view(), &py.position);
                let log_term =
                    2.0 * (py.log_density - log_z) + (px.log_density - log_z) - lp;
                acc += wy * h(&px.position, &py.position) * log_term.exp();
            }
            wx * acc
        })
        .sum();
    Ok(total)
}

fn normalized_mean<T: TargetDensity + ?Sized>(
    target: &T,
    nodes: &[(Vec<f64>, f64)],
    f: &Functional,
) -> Vec<f64> {
    let lps: Vec<f64> = nodes.iter().map(|(u, _)| target.log_density(u)).collect();
    let max_lp = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut acc = vec![0.0; f.dim_out];
    let mut buf = vec![0.0; f.dim_out];
    for ((u, w), lp) in nodes.iter().zip(&lps) {
        let wt = w * (lp - max_lp).exp();
        if wt == 0.0 {
            continue;
        }
        z += wt;
        f.eval_into(u, &mut buf);
        acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += wt * b);
    }
    acc.iter().map(|a| a / z).collect()
}

/// Which double integral of the importance weight to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMoment {
    /// `V(s) = ∫∫ |f(y) − E_μ f|² (dμ/dP(x,·))(y) μ(dy) μ(dx)`, the asymptotic
    /// variance of `Aₙ(f)` (summed over components).
    Variance,
    /// `∫∫ (dμ/dP(x,·))(y) μ(dy) μ(dx)`.
    Normalizer,
    /// `V` with the integrand further multiplied by `|y − x|²_C`, the
    /// numerator of the quadrature version of `d · J_f`.
    DisplacementVariance,
}

/// Evaluate a [`WeightMoment`] at one stepsize with convergence checks.
///
/// The rule is refined by node doubling; disagreement above `1e−4`
/// relative is an error. A box widened by half again that changes the value
/// by more than `1e−3` relative signals a divergent integral, reported as
/// `+∞`.
pub fn weight_moment<T: TargetDensity + ?Sized, P: ProposalKernel + ?Sized>(
    target: &T,
    proposal: &P,
    f: &Functional,
    moment: WeightMoment,
    bx: &QuadratureBox,
) -> Result<f64> {
    let d = target.dim();
    if d > 2 || bx.center.len() != d || bx.scale.len() != d {
        return Err(Error::InvalidArgument(format!(
            "quadrature of V needs dim ≤ 2 and a matching box, got dim {d}"
        )));
    }
    let n = bx.nodes_per_dim;
    let coarse = box_nodes(bx, n, 1.0);
    let fine = box_nodes(bx, 2 * n, 1.0);
    let wide = box_nodes(bx, 2 * n, 1.5);
    let mean = normalized_mean(target, &fine, f);
    let chol = proposal.covariance_factor();
    let integrand = |x: &[f64], y: &[f64]| -> f64 {
        let r = match moment {
            WeightMoment::Normalizer => 1.0,
            _ => {
                let fy = f.eval(y);
                fy.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum()
            }
        };
        if moment == WeightMoment::DisplacementVariance {
            let diff: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
            let q = chol.map_or_else(|| diff.iter().map(|v| v * v).sum(), |c| c.mahalanobis_sq(&diff));
            r * q
        } else {
            r
        }
    };
    let a = weighted_double_integral(target, proposal, &coarse, &integrand)?;
    let b = weighted_double_integral(target, proposal, &fine, &integrand)?;
    let c = weighted_double_integral(target, proposal, &wide, &integrand)?;
    let rel = |u: f64, v: f64| (u - v).abs() / v.abs().max(1e-300);
    if !c.is_finite() || rel(b, c) > 1e-3 {
        return Ok(f64::INFINITY);
    }
    if rel(a, b) > 1e-4 {
        return Err(Error::QuadratureNotConverged {
            relative_change: rel(a, b),
            refinements: 1,
        });
    }
    Ok(b)
}

/// `V(s)` over a stepsize grid by tensor quadrature (targets of dimension 1
/// or 2). Divergent integrals come back as `+∞`.
pub fn quadrature_v<T: TargetDensity + ?Sized>(
    target: &T,
    factory: &ProposalFactory<'_>,
    f: &Functional,
    s_grid: &[f64],
    bx: &QuadratureBox,
) -> Result<Vec<(f64, f64)>> {
    let mut grid = s_grid.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.iter()
        .map(|&s| {
            let p = factory(s)?;
            Ok((s, weight_moment(target, p.as_ref(), f, WeightMoment::Variance, bx)?))
        })
        .collect()
}

/// Quadrature version of `J_f(s)`.
pub fn quadrature_j_f<T: TargetDensity + ?Sized, P: ProposalKernel + ?Sized>(
    target: &T,
    proposal: &P,
    f: &Functional,
    bx: &QuadratureBox,
) -> Result<f64> {
    let num = weight_moment(target, proposal, f, WeightMoment::DisplacementVariance, bx)?;
    let den = weight_moment(target, proposal, f, WeightMoment::Variance, bx)?;
    Ok(num / (proposal.dim() as f64 * den))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GaussianRandomWalk;
    use crate::problems::GaussianTarget;

    fn rw_factory(dim: usize) -> impl Fn(f64) -> Result<Box<dyn ProposalKernel>> + Sync {
        move |s| Ok(Box::new(GaussianRandomWalk::isotropic(dim, s)?) as Box<dyn ProposalKernel>)
    }

    #[test]
    fn stub_root_is_found() {
        // J_f(s) = 3 + 0.5 s, so s² − J_f has its root at s = (0.5 + √12.25)/2 = 2.
        let eval = |s: f64| {
            Ok(FixedPointEvaluation {
                j_f: 3.0 + 0.5 * s,
                j: 1.0,
                acceptance_rate: 0.5,
                residual: None,
            })
        };
        let cfg = CalibrationConfig {
            tol: 1e-6,
            max_iters: 200,
            ..CalibrationConfig::new(0.5, 10.0, vec![0.0])
        };
        let st = calibrate_with(eval, &cfg).unwrap();
        assert!(st.converged);
        assert!((st.s_current - 2.0).abs() < 1e-5);
        assert_eq!(st.sign_changes.len(), 1);
        assert!(st.history.iter().all(|h| h.s >= 0.5 && h.s <= 10.0));
    }

    #[test]
    fn jump_without_root_stops_after_max_iters() {
        // g jumps from −10 to +10 at s = 2 and never comes within tolerance.
        let eval = |s: f64| {
            Ok(FixedPointEvaluation {
                j_f: if s < 2.0 { s * s + 10.0 } else { s * s - 10.0 },
                j: 1.0,
                acceptance_rate: 0.5,
                residual: None,
            })
        };
        let cfg = CalibrationConfig {
            max_iters: 12,
            ..CalibrationConfig::new(0.5, 8.0, vec![0.0])
        };
        let st = calibrate_with(eval, &cfg).unwrap();
        assert!(!st.converged);
        assert_eq!(st.history.len(), cfg.grid_points + 12);
        assert!((st.s_current - 2.0).abs() < 0.01);
    }

    #[test]
    fn no_sign_change_carries_samples() {
        let eval = |_s: f64| {
            Ok(FixedPointEvaluation {
                j_f: 1e6,
                j: 1.0,
                acceptance_rate: 0.5,
                residual: None,
            })
        };
        match calibrate_with(eval, &CalibrationConfig::new(0.5, 2.0, vec![0.0])) {
            Err(Error::NoSignChange { samples }) => assert_eq!(samples.len(), 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn j_f_constant_displacement() {
        let p = GaussianRandomWalk::isotropic(2, 1.0).unwrap();
        let mk = |y: [f64; 2], lw: f64| AugmentedChainRecord {
            x: vec![0.0, 0.0],
            y: y.to_vec(),
            log_alpha: 0.0,
            accepted: false,
            log_weight: lw,
            log_target_x: 0.0,
            log_target_y: 0.0,
            log_proposal_xy: 0.0,
            x_grad: None,
        };
        // |Y − X|² = 2 for every record and f(Y) = Y₀ ∈ {±1} with S = 0.
        let rs = vec![mk([1.0, 1.0], 0.3), mk([-1.0, 1.0], -0.2), mk([1.0, -1.0], 1.0)];
        let jf = empirical_j_f(&rs, &Functional::component(0), &p).unwrap();
        let j = empirical_j(&rs, &p).unwrap();
        assert!((jf - 1.0).abs() < 1e-14 && (j - 1.0).abs() < 1e-14);
        assert!(matches!(
            empirical_j_f(&rs, &Functional::constant(1.0), &p),
            Err(Error::DegenerateFunctional)
        ));
    }

    #[test]
    fn v_vanishes_for_constant_f_and_is_u_shaped() {
        let t = GaussianTarget::standard(1);
        let bx = QuadratureBox::standard(1);
        let fac = rw_factory(1);
        let v = quadrature_v(&t, &fac, &Functional::constant(3.0), &[1.5, 2.0, 4.0], &bx).unwrap();
        assert!(v.iter().all(|(_, v)| *v == 0.0));
        let v = quadrature_v(&t, &fac, &Functional::identity(1), &[1.0, 2.07, 20.0], &bx).unwrap();
        assert!(v[0].1 > v[1].1 && v[2].1 > v[1].1, "{v:?}");
    }
}

//! Estimators of `E_μ(f)` from an augmented chain: the path average `Sₙ`,
//! the importance sampling estimator `Aₙ`, waste recycling `WRₙ` and the
//! mixture-weighted `Bₙ`, plus variance estimators and the weighted-series
//! autocorrelation diagnostic.
//!
//! All weight arithmetic happens in the log domain after a max shift.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{log_sum_exp, ProposalKernel};
use crate::sampler::AugmentedChainRecord;
use crate::stats;
use crate::{Error, Result};

type EvalFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A vector-valued test function `f: ℝᵈ → ℝᵐ`.
pub struct Functional {
    pub name: String,
    pub dim_out: usize,
    eval: EvalFn,
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional")
            .field("name", &self.name)
            .field("dim_out", &self.dim_out)
            .finish()
    }
}

impl Functional {
    pub fn new(
        name: impl Into<String>,
        dim_out: usize,
        eval: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim_out,
            eval: Box::new(eval),
        }
    }

    /// Scalar functional.
    pub fn scalar(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(name, 1, move |x, out| out[0] = f(x))
    }

    /// `f(x) = x` on ℝᵈ: the posterior mean.
    pub fn identity(dim: usize) -> Self {
        Self::new("identity", dim, |x, out| out.copy_from_slice(x))
    }

    pub fn component(i: usize) -> Self {
        Self::scalar(format!("x{i}"), move |x| x[i])
    }

    pub fn constant(c: f64) -> Self {
        Self::scalar("constant", move |_| c)
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_out];
        (self.eval)(x, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub value: Vec<f64>,
    pub n: usize,
    #[serde(rename = "sigma2_A", skip_serializing_if = "Option::is_none", default)]
    pub sigma2_a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log_normalizer: Option<f64>,
    /// Proposal-density evaluations spent (only `Bₙ` needs any).
    #[serde(skip)]
    pub proposal_evaluations: u64,
}

impl EstimateReport {
    fn plain(estimator: &str, value: Vec<f64>, n: usize) -> Self {
        Self {
            estimator: estimator.to_string(),
            value,
            n,
            sigma2_a: None,
            log_normalizer: None,
            proposal_evaluations: 0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Which estimator to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    S,
    A,
    WR,
    B,
    #[serde(rename = "B_sqrt_n")]
    BSqrtN,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [Self::S, Self::A, Self::WR, Self::B, Self::BSqrtN];

    pub fn label(self) -> &'static str {
        match self {
            Self::S => "S",
            Self::A => "A",
            Self::WR => "WR",
            Self::B => "B",
            Self::BSqrtN => "B_sqrt_n",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" => Ok(Self::S),
            "A" => Ok(Self::A),
            "WR" => Ok(Self::WR),
            "B" => Ok(Self::B),
            "B_sqrt_n" | "B_sqrt" => Ok(Self::BSqrtN),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Compute one estimator. `proposal` is only consulted by `Bₙ`.
pub fn estimate<P: ProposalKernel + ?Sized>(
    kind: EstimatorKind,
    records: &[AugmentedChainRecord],
    f: &Functional,
    proposal: &P,
) -> Result<EstimateReport> {
    match kind {
        EstimatorKind::S => estimate_s(records, f),
        EstimatorKind::A => estimate_a(records, f),
        EstimatorKind::WR => estimate_wr(records, f),
        EstimatorKind::B => estimate_b(records, f, proposal, None),
        EstimatorKind::BSqrtN => {
            let m = (records.len() as f64).sqrt().floor() as usize;
            estimate_b(records, f, proposal, Some(m.max(1)))
        }
    }
}

fn non_empty(records: &[AugmentedChainRecord], what: &'static str) -> Result<()> {
    if records.is_empty() {
        Err(Error::Empty(what))
    } else {
        Ok(())
    }
}

/// `Sₙ(f) = (1/n) Σ f(Xₖ)`.
pub fn estimate_s(records: &[AugmentedChainRecord], f: &Functional) -> Result<EstimateReport> {
    non_empty(records, "estimate_s records")?;
    let m = f.dim_out;
    let mut acc = vec![0.0; m];
    let mut buf = vec![0.0; m];
    for r in records {
        f.eval_into(&r.x, &mut buf);
        acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
    }
    let n = records.len();
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(EstimateReport::plain("S", acc, n))
}

/// Normalized weights `ρ̄ₖ / Σ ρ̄ⱼ` and `log Σ ρ̄ⱼ`.
pub fn normalized_weights(log_weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    let lse = log_sum_exp(log_weights)?;
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    if !lse.is_finite() {
        return Err(Error::NaN("importance weights"));
    }
    Ok((log_weights.iter().map(|lw| (lw - lse).exp()).collect(), lse))
}

fn record_log_weights(records: &[AugmentedChainRecord]) -> Vec<f64> {
    records.iter().map(|r| r.log_weight).collect()
}

/// Self-normalized weighted mean of `f(Yₖ)`; zero-weight terms are skipped so
/// `f` is never needed where ρ vanishes.
fn weighted_mean_y(records: &[AugmentedChainRecord], weights: &[f64], f: &Functional) -> Vec<f64> {
    let m = f.dim_out;
    let mut acc = vec![0.0; m];
    let mut buf = vec![0.0; m];
    for (r, &w) in records.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        f.eval_into(&r.y, &mut buf);
        acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += w * b);
    }
    acc
}

/// `Aₙ(f) = Σ ρ̄ₖ f(Yₖ) / Σ ρ̄ₖ`. The report carries `log Σ ρ̄ₖ` and, for
/// `n ≥ 2`, the asymptotic variance estimate centered at `Sₙ(f)`.
pub fn estimate_a(records: &[AugmentedChainRecord], f: &Functional) -> Result<EstimateReport> {
    non_empty(records, "estimate_a records")?;
    let (w, lse) = normalized_weights(&record_log_weights(records))?;
    let value = weighted_mean_y(records, &w, f);
    let sigma2 = if records.len() >= 2 {
        let s = estimate_s(records, f)?.value;
        Some(sigma2_a_from_weights(records, &w, f, &s))
    } else {
        None
    };
    Ok(EstimateReport {
        estimator: "A".into(),
        value,
        n: records.len(),
        sigma2_a: sigma2,
        log_normalizer: Some(lse),
        proposal_evaluations: 0,
    })
}

/// `WRₙ(f) = (1/n) Σ [(1 − αₖ) f(Xₖ) + αₖ f(Yₖ)]`.
pub fn estimate_wr(records: &[AugmentedChainRecord], f: &Functional) -> Result<EstimateReport> {
    non_empty(records, "estimate_wr records")?;
    let m = f.dim_out;
    let mut acc = vec![0.0; m];
    let mut fx = vec![0.0; m];
    let mut fy = vec![0.0; m];
    for r in records {
        let a = r.alpha();
        if a < 1.0 {
            f.eval_into(&r.x, &mut fx);
            acc.iter_mut().zip(&fx).for_each(|(s, v)| *s += (1.0 - a) * v);
        }
        if a > 0.0 {
            f.eval_into(&r.y, &mut fy);
            acc.iter_mut().zip(&fy).for_each(|(s, v)| *s += a * v);
        }
    }
    let n = records.len();
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(EstimateReport::plain("WR", acc, n))
}

/// Deterministic stride subsample of `m` indices out of `0..n`.
pub fn stride_indices(n: usize, m: usize) -> Vec<usize> {
    let m = m.min(n);
    (0..m).map(|i| i * n / m).collect()
}

/// `Bₙ(f) = Σ w̃ₖ f(Yₖ) / Σ w̃ₖ` with `w̃ₖ = ρ(Yₖ) / Σⱼ p(Xⱼ, Yₖ)`.
///
/// Without `subsample` both `j` and `k` run over all records (cost Θ(n²)
/// proposal evaluations, fewer when rejections repeat states). With
/// `subsample = m` both index sets are the same deterministic stride of `m`
/// records, so `m = ⌊√n⌋` costs Θ(n).
pub fn estimate_b<P: ProposalKernel + ?Sized>(
    records: &[AugmentedChainRecord],
    f: &Functional,
    proposal: &P,
    subsample: Option<usize>,
) -> Result<EstimateReport> {
    non_empty(records, "estimate_b records")?;
    let n = records.len();
    let index: Vec<usize> = match subsample {
        Some(0) => return Err(Error::InvalidArgument("subsample must be positive".into())),
        Some(m) if m > n => {
            return Err(Error::InvalidArgument(format!(
                "subsample {m} exceeds chain length {n}"
            )))
        }
        Some(m) => stride_indices(n, m),
        None => (0..n).collect(),
    };

    // Consecutive identical states (rejection runs) collapse into one mixture
    // component with a multiplicity.
    let mut sources: Vec<(usize, f64)> = Vec::new();
    for &j in &index {
        match sources.last_mut() {
            Some((rep, count)) if records[*rep].x == records[j].x => *count += 1.0,
            _ => sources.push((j, 1.0)),
        }
    }

    let log_mix = mixture_log_densities(records, &sources, &index, proposal)?;
    let log_w: Vec<f64> = index
        .iter()
        .zip(&log_mix)
        .map(|(&k, &lm)| {
            let lt = records[k].log_target_y;
            if lt == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lt - lm
            }
        })
        .collect();
    let (w, lse) = normalized_weights(&log_w)?;

    let m = f.dim_out;
    let mut acc = vec![0.0; m];
    let mut buf = vec![0.0; m];
    for (&k, &wk) in index.iter().zip(&w) {
        if wk == 0.0 {
            continue;
        }
        f.eval_into(&records[k].y, &mut buf);
        acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += wk * b);
    }
    let name = if subsample.is_some() { "B_sqrt_n" } else { "B" };
    Ok(EstimateReport {
        estimator: name.into(),
        value: acc,
        n: index.len(),
        sigma2_a: None,
        log_normalizer: Some(lse),
        proposal_evaluations: (sources.len() * index.len()) as u64,
    })
}

/// `log Σⱼ cⱼ p(Xⱼ, Yₖ)` for every `k` in `targets`, where `sources` lists
/// `(record index, multiplicity cⱼ)`. Parallel over `k`; each entry is
/// reduced sequentially so the result does not depend on the thread count.
fn mixture_log_densities<P: ProposalKernel + ?Sized>(
    records: &[AugmentedChainRecord],
    sources: &[(usize, f64)],
    targets: &[usize],
    proposal: &P,
) -> Result<Vec<f64>> {
    let s = proposal.stepsize();
    if let Some(chol) = proposal.covariance_factor() {
        let d = chol.dim();
        let first = records[sources[0].0].x_view();
        let mean0 = proposal
            .gaussian_mean(first)
            .expect("Gaussian kernel provides its mean");
        // log p(x, m(x)) is the normalizing constant shared by all origins.
        let log_const = proposal.log_density(first, &mean0);
        let mut centers = vec![0.0; sources.len() * d];
        let mut log_mult = Vec::with_capacity(sources.len());
        for (c, &(j, mult)) in centers.chunks_mut(d).zip(sources) {
            let mean = proposal
                .gaussian_mean(records[j].x_view())
                .expect("Gaussian kernel provides its mean");
            chol.whiten(&mean, c);
            log_mult.push(mult.ln());
        }
        let inv = 1.0 / (2.0 * s * s);
        let out: Vec<f64> = targets
            .par_iter()
            .map_init(
                || (vec![0.0; d], vec![0.0; sources.len()]),
                |(zy, terms), &k| {
                    chol.whiten(&records[k].y, zy);
                    for ((t, c), lm) in terms.iter_mut().zip(centers.chunks(d)).zip(&log_mult) {
                        let q: f64 = zy.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                        *t = lm - q * inv;
                    }
                    log_sum_exp(terms).map(|v| v + log_const)
                },
            )
            .collect::<Result<_>>()?;
        return Ok(out);
    }
    targets
        .par_iter()
        .map(|&k| {
            let terms: Vec<f64> = sources
                .iter()
                .map(|&(j, mult)| mult.ln() + proposal.log_density(records[j].x_view(), &records[k].y))
                .collect();
            log_sum_exp(&terms)
        })
        .collect()
}

/// Centering used by the `σ²_A` estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// Center at the path average `Sₙ(f)`.
    #[default]
    PathAverage,
    /// Center at `Aₙ(f)` itself.
    Importance,
}

fn sigma2_a_from_weights(
    records: &[AugmentedChainRecord],
    w: &[f64],
    f: &Functional,
    center: &[f64],
) -> Vec<f64> {
    let m = f.dim_out;
    let mut acc = vec![0.0; m];
    let mut buf = vec![0.0; m];
    for (r, &wk) in records.iter().zip(w) {
        if wk == 0.0 {
            continue;
        }
        f.eval_into(&r.y, &mut buf);
        for i in 0..m {
            let d = buf[i] - center[i];
            acc[i] += d * d * wk * wk;
        }
    }
    let n = records.len() as f64;
    acc.iter().map(|a| n * a).collect()
}

/// `σ̂²_A = n Σₖ (f(Yₖ) − c)² ρ̄ₖ² / (Σₖ ρ̄ₖ)²` per component, with `c` from
/// `centering`. Squared weights are normalized in the log domain.
pub fn estimate_sigma2_a(
    records: &[AugmentedChainRecord],
    f: &Functional,
    centering: Centering,
) -> Result<Vec<f64>> {
    let finite = records.iter().filter(|r| r.log_weight > f64::NEG_INFINITY).count();
    if records.len() < 2 || finite == 0 {
        return Err(if finite == 0 && !records.is_empty() {
            Error::DegenerateWeights
        } else {
            Error::Empty("estimate_sigma2_a needs at least two records")
        });
    }
    let (w, _) = normalized_weights(&record_log_weights(records))?;
    let center = match centering {
        Centering::PathAverage => estimate_s(records, f)?.value,
        Centering::Importance => weighted_mean_y(records, &w, f),
    };
    Ok(sigma2_a_from_weights(records, &w, f, &center))
}

/// Default batch count `⌊n^{1/3}⌋`.
pub fn default_batches(n: usize) -> usize {
    let mut b = (n as f64).cbrt().floor() as usize;
    // Guard against cbrt rounding just below an exact cube.
    while (b + 1).pow(3) <= n {
        b += 1;
    }
    b
}

/// Batch-means estimate of the asymptotic variance of `Sₙ(f)`: with batch
/// size `b = ⌊n / n_batches⌋`, `b` times the sample variance of the batch
/// means. The leading `n mod n_batches` records are dropped.
pub fn estimate_sigma2_s_batchmeans(
    records: &[AugmentedChainRecord],
    f: &Functional,
    n_batches: usize,
) -> Result<Vec<f64>> {
    if n_batches < 10 {
        return Err(Error::InvalidArgument(format!(
            "batch means needs at least 10 batches, got {n_batches}"
        )));
    }
    let n = records.len();
    if n < n_batches {
        return Err(Error::Empty("fewer records than batches"));
    }
    let b = n / n_batches;
    let used = &records[n - b * n_batches..];
    let m = f.dim_out;
    let mut means = vec![vec![0.0; n_batches]; m];
    let mut buf = vec![0.0; m];
    for (i, r) in used.iter().enumerate() {
        f.eval_into(&r.x, &mut buf);
        for c in 0..m {
            means[c][i / b] += buf[c];
        }
    }
    Ok(means
        .iter()
        .map(|bm| {
            let bm: Vec<f64> = bm.iter().map(|v| v / b as f64).collect();
            b as f64 * stats::sample_variance(&bm)
        })
        .collect())
}

/// Autocorrelations at lags `0..=max_lag` of `hₖ = ρ̄ₖ (f(Yₖ) − Aₙ(f))`, one
/// sequence per output component of `f`.
pub fn weighted_series_autocorr(
    records: &[AugmentedChainRecord],
    f: &Functional,
    max_lag: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = records.len();
    if n <= 10 * max_lag || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "need more than {} records for max_lag {max_lag}, got {n}",
            10 * max_lag
        )));
    }
    let (w, _) = normalized_weights(&record_log_weights(records))?;
    let a = weighted_mean_y(records, &w, f);
    let m = f.dim_out;
    let mut series = vec![vec![0.0; n]; m];
    let mut buf = vec![0.0; m];
    for (k, (r, &wk)) in records.iter().zip(&w).enumerate() {
        if wk == 0.0 {
            continue;
        }
        f.eval_into(&r.y, &mut buf);
        for c in 0..m {
            series[c][k] = wk * (buf[c] - a[c]);
        }
    }
    series
        .iter()
        .map(|h| stats::autocorrelation_centered(h, max_lag).ok_or(Error::DegenerateSeries))
        .collect()
}

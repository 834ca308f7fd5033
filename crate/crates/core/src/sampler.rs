//! Metropolis–Hastings with the full augmented chain `(Xₖ, Yₖ)` recorded.

use std::io::Write;

use rand::{Rng, RngCore};

use crate::density::{Point, ProposalKernel, StateView, TargetDensity};
use crate::{Error, Result};

/// One step of the augmented chain.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedChainRecord {
    /// Current state `Xₖ`.
    pub x: Vec<f64>,
    /// Proposed state `Yₖ ~ P(Xₖ, ·)`.
    pub y: Vec<f64>,
    /// `log α(Xₖ, Yₖ) ≤ 0`.
    pub log_alpha: f64,
    pub accepted: bool,
    /// `log ρ̄(Xₖ, Yₖ) = log ρ(Yₖ) − log p(Xₖ, Yₖ)`, `−∞` iff `ρ(Yₖ) = 0`.
    pub log_weight: f64,
    pub log_target_x: f64,
    pub log_target_y: f64,
    pub log_proposal_xy: f64,
    /// `∇ log ρ(Xₖ)`, kept for gradient-based proposals.
    pub x_grad: Option<Vec<f64>>,
}

impl AugmentedChainRecord {
    pub fn x_view(&self) -> StateView<'_> {
        StateView {
            position: &self.x,
            grad: self.x_grad.as_deref(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRunConfig {
    /// Number of post-burn-in records returned.
    pub n_steps: usize,
    pub burn_in: usize,
    pub initial_state: Vec<f64>,
    /// Keep the burn-in transient at the front of the record sequence.
    pub record_burn_in: bool,
}

impl ChainRunConfig {
    /// Burn-in defaults to `n_steps / 10`.
    pub fn new(n_steps: usize, initial_state: Vec<f64>) -> Self {
        Self {
            n_steps,
            burn_in: n_steps / 10,
            initial_state,
            record_burn_in: false,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn total_steps(&self) -> usize {
        self.n_steps + self.burn_in
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub records: Vec<AugmentedChainRecord>,
    /// Leading records that belong to the burn-in (nonzero only when
    /// `record_burn_in` was set).
    pub burn_in: usize,
}

impl Chain {
    pub fn post_burn_in(&self) -> &[AugmentedChainRecord] {
        &self.records[self.burn_in..]
    }
}

/// `log r(x, y)`, with `r = 1` whenever `ρ(x) p(x, y) = 0`. Never NaN.
pub fn log_acceptance_ratio<T, P>(target: &T, proposal: &P, x: &[f64], y: &[f64]) -> f64
where
    T: TargetDensity + ?Sized,
    P: ProposalKernel + ?Sized,
{
    let grad = proposal.needs_gradient();
    let px = Point::evaluate(target, x.to_vec(), grad);
    let py = Point::evaluate(target, y.to_vec(), grad);
    let lp_xy = proposal_log_density(proposal, &px, y);
    let lp_yx = proposal_log_density(proposal, &py, x);
    combine_log_ratio(px.log_density, lp_xy, py.log_density, lp_yx)
}

fn proposal_log_density<P: ProposalKernel + ?Sized>(proposal: &P, from: &Point, to: &[f64]) -> f64 {
    if proposal.needs_gradient() && from.grad.is_none() {
        // No gradient is available only where ρ vanishes; p(from, ·) is then
        // irrelevant because the ratio is decided by the zero of ρ.
        return f64::NEG_INFINITY;
    }
    proposal.log_density(from.view(), to)
}

fn combine_log_ratio(lt_x: f64, lp_xy: f64, lt_y: f64, lp_yx: f64) -> f64 {
    if lt_x == f64::NEG_INFINITY || lp_xy == f64::NEG_INFINITY {
        return 0.0;
    }
    if lt_y == f64::NEG_INFINITY || lp_yx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let r = lt_y + lp_yx - lt_x - lp_xy;
    if r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r
    }
}

/// One MH transition from the evaluated state `current`. Returns the record
/// and the next evaluated state; ρ is evaluated once (at the proposal).
pub fn mh_step<T, P>(
    target: &T,
    proposal: &P,
    current: &Point,
    rng: &mut dyn RngCore,
) -> (AugmentedChainRecord, Point)
where
    T: TargetDensity + ?Sized,
    P: ProposalKernel + ?Sized,
{
    let needs_grad = proposal.needs_gradient();
    let y = proposal.sample(current.view(), rng);
    let u: f64 = rng.random();
    let proposed = Point::evaluate(target, y, needs_grad);

    let lp_xy = proposal_log_density(proposal, current, &proposed.position);
    let lp_yx = if proposed.log_density == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        proposal_log_density(proposal, &proposed, &current.position)
    };
    let log_r = combine_log_ratio(current.log_density, lp_xy, proposed.log_density, lp_yx);
    let log_alpha = log_r.min(0.0);
    let accepted = u.ln() < log_alpha;
    let log_weight = if proposed.log_density == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        proposed.log_density - lp_xy
    };

    let record = AugmentedChainRecord {
        x: current.position.clone(),
        y: proposed.position.clone(),
        log_alpha,
        accepted,
        log_weight,
        log_target_x: current.log_density,
        log_target_y: proposed.log_density,
        log_proposal_xy: lp_xy,
        x_grad: current.grad.clone(),
    };
    let next = if accepted { proposed } else { current.clone() };
    (record, next)
}

/// Run `burn_in + n_steps` MH transitions. The returned records exclude the
/// burn-in unless `record_burn_in` is set.
pub fn run_chain<T, P>(
    target: &T,
    proposal: &P,
    config: &ChainRunConfig,
    rng: &mut dyn RngCore,
) -> Result<Chain>
where
    T: TargetDensity + ?Sized,
    P: ProposalKernel + ?Sized,
{
    let d = target.dim();
    if config.initial_state.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: config.initial_state.len(),
        });
    }
    if proposal.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: proposal.dim(),
        });
    }
    let needs_grad = proposal.needs_gradient();
    let mut current = Point::evaluate(target, config.initial_state.clone(), needs_grad);
    if current.log_density.is_nan() || current.log_density == f64::INFINITY {
        return Err(Error::NonFiniteState { step: 0 });
    }
    if current.log_density == f64::NEG_INFINITY {
        log::warn!("initial state has zero target density; first move is accepted unconditionally");
    }

    let total = config.total_steps();
    let keep_from = if config.record_burn_in { 0 } else { config.burn_in };
    let mut records = Vec::with_capacity(total - keep_from);
    for step in 0..total {
        let (record, next) = mh_step(target, proposal, &current, rng);
        if record.y.iter().any(|v| !v.is_finite())
            || record.log_target_y.is_nan()
            || record.log_target_y == f64::INFINITY
            || record.log_weight.is_nan()
        {
            return Err(Error::NonFiniteState { step });
        }
        if step >= keep_from {
            records.push(record);
        }
        current = next;
    }
    Ok(Chain {
        records,
        burn_in: if config.record_burn_in { config.burn_in } else { 0 },
    })
}

pub fn acceptance_rate(records: &[AugmentedChainRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("acceptance_rate records"));
    }
    let acc = records.iter().filter(|r| r.accepted).count();
    Ok(acc as f64 / records.len() as f64)
}

/// Check that every accepted record hands its proposal on as the next state
/// and every rejected one its current state. Returns the first offending index.
pub fn check_chain_consistency(records: &[AugmentedChainRecord]) -> Option<usize> {
    records.windows(2).position(|w| {
        let expected = if w[0].accepted { &w[0].y } else { &w[0].x };
        *expected != w[1].x
    })
}

/// Write records as CSV with columns `step, x0.., y0.., log_alpha, accepted,
/// log_weight`. Floats use the shortest round-trip representation.
pub fn write_chain_csv<W: Write>(records: &[AugmentedChainRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = records.first().map_or(0, |r| r.x.len());
    let mut header = vec!["step".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.extend((0..d).map(|i| format!("y{i}")));
    header.extend(["log_alpha", "accepted", "log_weight"].map(String::from));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(2 * d + 4);
    for (k, r) in records.iter().enumerate() {
        row.clear();
        row.push(k.to_string());
        row.extend(r.x.iter().map(|v| v.to_string()));
        row.extend(r.y.iter().map(|v| v.to_string()));
        row.push(r.log_alpha.to_string());
        row.push(if r.accepted { "1" } else { "0" }.to_string());
        row.push(r.log_weight.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

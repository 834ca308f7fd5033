//! Replicate experiments: for every stepsize, run `M` independent chains,
//! compute each requested estimator on the same chain, and aggregate RMSE,
//! bias, variance and acceptance rates.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_stepsize, CalibrationConfig, CalibrationState};
use crate::density::{CountingTarget, GaussianRandomWalk, Mala, ProposalKernel, RngStream, TargetDensity};
use crate::estimators::{estimate, EstimatorKind, Functional};
use crate::linalg::Cholesky;
use crate::problems::{
    gh_posterior_mean_converged, laplace_approximation, load_pima, synthetic_pima, BvpPosterior,
    GaussianTarget, LaplaceApproximation, ProbitPosterior, QuadratureOracle, SYNTHETIC_PIMA_SEED,
};
use crate::sampler::{acceptance_rate, run_chain, write_chain_csv, Chain, ChainRunConfig};
use crate::{Error, Result};

/// Stream id reserved for calibration pilot chains; replicates use `0..M`.
pub const CALIBRATION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Bvp,
    Probit,
    GaussianToy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalChoice {
    Rw,
    Mala,
}

/// How each replicate chain is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// A draw from the Laplace approximation of the target.
    #[default]
    LaplaceDraw,
    /// The Laplace mode.
    Mode,
}

/// Proposal covariance `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// Inverse negative Hessian at the mode.
    #[default]
    Laplace,
    /// Diagonal of the Laplace covariance.
    LaplaceDiagonal,
    Identity,
}

/// Where the quadratic-cost `Bₙ` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BPolicy {
    #[default]
    EveryStepsize,
    /// Only at the stepsize minimizing RMSE(`Aₙ`), on the same chains.
    AtOptimumOfA,
}

/// Geometric stepsize sequence `from, …, to` with `points` entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricGrid {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl GeometricGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.from];
        }
        let (a, b) = (self.from.ln(), self.to.ln());
        (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    self.to
                } else {
                    (a + (b - a) * i as f64 / (self.points - 1) as f64).exp()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSettings {
    #[serde(default = "default_s_lo")]
    pub s_lo: f64,
    #[serde(default = "default_s_hi")]
    pub s_hi: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_pilot_steps")]
    pub pilot_steps: usize,
    #[serde(default = "default_pilot_burn_in")]
    pub pilot_burn_in: usize,
    #[serde(default = "default_cal_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_s_lo() -> f64 {
    0.1
}
fn default_s_hi() -> f64 {
    10.0
}
fn default_grid_points() -> usize {
    9
}
fn default_pilot_steps() -> usize {
    20_000
}
fn default_pilot_burn_in() -> usize {
    1_000
}
fn default_cal_tol() -> f64 {
    0.05
}
fn default_max_iters() -> usize {
    30
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            s_lo: default_s_lo(),
            s_hi: default_s_hi(),
            grid_points: default_grid_points(),
            pilot_steps: default_pilot_steps(),
            pilot_burn_in: default_pilot_burn_in(),
            tol: default_cal_tol(),
            max_iters: default_max_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub proposal: ProposalChoice,
    #[serde(default)]
    pub stepsizes: Vec<f64>,
    #[serde(default)]
    pub grid: Option<GeometricGrid>,
    #[serde(default)]
    pub calibrate: bool,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    pub n_steps: usize,
    /// Defaults to `n_steps / 10`.
    #[serde(default)]
    pub burn_in: Option<usize>,
    pub n_replicates: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_probit_dims")]
    pub probit_dims: Vec<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_gaussian_dim")]
    pub gaussian_dim: usize,
    /// PIMA CSV; the synthetic table is used when absent.
    #[serde(default)]
    pub pima_path: Option<PathBuf>,
    #[serde(default)]
    pub b_policy: BPolicy,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default)]
    pub preconditioner: Preconditioner,
    #[serde(default = "default_quadrature_nodes")]
    pub quadrature_nodes: usize,
}

fn default_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}
fn default_probit_dims() -> Vec<usize> {
    (2..=9).collect()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_gaussian_dim() -> usize {
    1
}
fn default_quadrature_nodes() -> usize {
    200
}

impl ExperimentConfig {
    /// A config with defaults for everything but the required fields.
    pub fn new(problem: ProblemKind, proposal: ProposalChoice, n_steps: usize, n_replicates: usize) -> Self {
        Self {
            problem,
            proposal,
            stepsizes: Vec::new(),
            grid: None,
            calibrate: false,
            calibration: CalibrationSettings::default(),
            n_steps,
            burn_in: None,
            n_replicates,
            estimators: default_estimators(),
            seed: 0,
            probit_dims: default_probit_dims(),
            output_dir: default_output_dir(),
            gaussian_dim: default_gaussian_dim(),
            pima_path: None,
            b_policy: BPolicy::default(),
            init: InitPolicy::default(),
            preconditioner: Preconditioner::default(),
            quadrature_nodes: default_quadrature_nodes(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_steps / 10)
    }

    /// Explicit stepsizes followed by the geometric grid, sorted and deduplicated.
    pub fn stepsize_grid(&self) -> Vec<f64> {
        let mut s = self.stepsizes.clone();
        if let Some(g) = &self.grid {
            s.extend(g.values());
        }
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        let has_grid = !self.stepsizes.is_empty() || self.grid.is_some();
        if has_grid == self.calibrate {
            return cfg_err("specify either stepsizes/grid or calibrate = true, not both or neither".into());
        }
        if self.stepsizes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return cfg_err(format!("stepsizes must be positive: {:?}", self.stepsizes));
        }
        if let Some(g) = &self.grid {
            if !(g.from > 0.0 && g.to >= g.from && g.to.is_finite() && g.points >= 1) {
                return cfg_err(format!("invalid geometric grid {g:?}"));
            }
        }
        let c = &self.calibration;
        if !(c.s_lo > 0.0 && c.s_hi > c.s_lo && c.grid_points >= 2 && c.pilot_steps > 0) {
            return cfg_err(format!("invalid calibration settings {c:?}"));
        }
        if self.n_steps < 2 {
            return cfg_err("n_steps must be at least 2".into());
        }
        if self.n_replicates < 2 {
            return cfg_err("n_replicates must be at least 2 for variances".into());
        }
        if self.estimators.is_empty() {
            return cfg_err("no estimators requested".into());
        }
        if self.problem == ProblemKind::Probit {
            if self.probit_dims.is_empty() || self.probit_dims.iter().any(|&d| !(1..=9).contains(&d)) {
                return cfg_err(format!("probit_dims must lie in 1..=9: {:?}", self.probit_dims));
            }
        }
        if self.problem == ProblemKind::GaussianToy && self.gaussian_dim == 0 {
            return cfg_err("gaussian_dim must be positive".into());
        }
        if self.quadrature_nodes < 2 {
            return cfg_err("quadrature_nodes must be at least 2".into());
        }
        if self.b_policy == BPolicy::AtOptimumOfA
            && self.estimators.contains(&EstimatorKind::B)
            && !self.estimators.contains(&EstimatorKind::A)
        {
            return cfg_err("b_policy = at_optimum_of_a needs estimator A".into());
        }
        Ok(())
    }
}

/// A target with its functional, Laplace approximation and reference value.
pub struct Problem {
    pub name: &'static str,
    pub dim: usize,
    pub target: Box<dyn TargetDensity + Send>,
    pub functional: Functional,
    pub laplace: LaplaceApproximation,
    /// `None` until pooled from the replicates (probit).
    pub truth: Option<Vec<f64>>,
    pub truth_source: String,
}

/// One problem per probit dimension, otherwise a single problem.
pub fn build_problems(config: &ExperimentConfig) -> Result<Vec<Problem>> {
    match config.problem {
        ProblemKind::GaussianToy => {
            let d = config.gaussian_dim;
            let target = GaussianTarget::standard(d);
            let laplace = LaplaceApproximation {
                mode: vec![0.0; d],
                covariance: crate::linalg::identity(d),
                log_density_at_mode: target.log_density(&vec![0.0; d]),
                iterations: 0,
            };
            Ok(vec![Problem {
                name: "gaussian_toy",
                dim: d,
                target: Box::new(target),
                functional: Functional::identity(d),
                laplace,
                truth: Some(vec![0.0; d]),
                truth_source: "exact".into(),
            }])
        }
        ProblemKind::Bvp => {
            let target = BvpPosterior::default();
            let laplace = laplace_approximation(&target, &[0.0, 0.0])?;
            let f = Functional::identity(2);
            let oracle = QuadratureOracle::laplace(&laplace, config.quadrature_nodes)?;
            let q = gh_posterior_mean_converged(&target, &f, &oracle, 1e-4)?;
            Ok(vec![Problem {
                name: "bvp",
                dim: 2,
                target: Box::new(target),
                functional: f,
                laplace,
                truth: Some(q.mean),
                truth_source: format!(
                    "Gauss-Hermite, {} nodes per dimension, relative change {:.1e}",
                    q.nodes_per_dim, q.relative_change
                ),
            }])
        }
        ProblemKind::Probit => {
            let data = match &config.pima_path {
                Some(p) => load_pima(p)?,
                None => {
                    log::info!("no pima_path given; using the synthetic table (seed {SYNTHETIC_PIMA_SEED})");
                    synthetic_pima(SYNTHETIC_PIMA_SEED)
                }
            };
            config
                .probit_dims
                .iter()
                .map(|&d| {
                    let target = ProbitPosterior::new(&data, d)?;
                    let laplace = laplace_approximation(&target, &vec![0.0; d])?;
                    Ok(Problem {
                        name: "probit",
                        dim: d,
                        target: Box::new(target),
                        functional: Functional::identity(d),
                        laplace,
                        truth: None,
                        truth_source: "pooled S estimate over all stepsizes and replicates".into(),
                    })
                })
                .collect()
        }
    }
}

fn preconditioner_factor(problem: &Problem, pre: Preconditioner) -> Result<Cholesky> {
    match pre {
        Preconditioner::Laplace => Cholesky::new(&problem.laplace.covariance, problem.dim),
        Preconditioner::LaplaceDiagonal => {
            let d = problem.dim;
            let mut cov = vec![0.0; d * d];
            for i in 0..d {
                cov[i * d + i] = problem.laplace.covariance[i * d + i];
            }
            Cholesky::new(&cov, d)
        }
        Preconditioner::Identity => Ok(Cholesky::identity(problem.dim)),
    }
}

pub fn make_proposal(
    problem: &Problem,
    choice: ProposalChoice,
    pre: Preconditioner,
    s: f64,
) -> Result<Box<dyn ProposalKernel>> {
    let chol = preconditioner_factor(problem, pre)?;
    Ok(match choice {
        ProposalChoice::Rw => Box::new(GaussianRandomWalk::from_cholesky(s, chol)?),
        ProposalChoice::Mala => Box::new(Mala::with_cholesky(problem.target.as_ref(), s, chol)?),
    })
}

fn initial_state(problem: &Problem, policy: InitPolicy, rng: &mut RngStream) -> Result<Vec<f64>> {
    let la = &problem.laplace;
    match policy {
        InitPolicy::Mode => Ok(la.mode.clone()),
        InitPolicy::LaplaceDraw => {
            let chol = Cholesky::new(&la.covariance, problem.dim)?;
            let z: Vec<f64> = (0..problem.dim).map(|_| StandardNormal.sample(rng)).collect();
            let mut x = vec![0.0; problem.dim];
            chol.mul_lower(&z, &mut x);
            x.iter_mut().zip(&la.mode).for_each(|(a, m)| *a += m);
            Ok(x)
        }
    }
}

/// Run replicate `replicate` of `problem` at one proposal. The chain is a
/// deterministic function of `(seed, replicate)` and the stepsize.
pub fn run_replicate_chain(
    problem: &Problem,
    proposal: &dyn ProposalKernel,
    config: &ExperimentConfig,
    replicate: u64,
) -> Result<(Chain, u64)> {
    let mut rng = RngStream::new(config.seed, replicate);
    let x0 = initial_state(problem, config.init, &mut rng)?;
    let counting = CountingTarget::new(problem.target.as_ref());
    let chain_cfg = ChainRunConfig::new(config.n_steps, x0).with_burn_in(config.burn_in());
    let chain = run_chain(&counting, proposal, &chain_cfg, &mut rng)?;
    // One evaluation for the start plus one per proposed state.
    let expected = chain_cfg.total_steps() as u64 + 1;
    if counting.evaluations() != expected {
        return Err(Error::EvaluationCount {
            expected,
            counted: counting.evaluations(),
        });
    }
    Ok((chain, expected))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub acceptance_rate: f64,
    pub estimates: BTreeMap<EstimatorKind, Vec<f64>>,
    pub rho_evaluations: u64,
    pub proposal_evaluations: u64,
}

fn run_replicate(
    problem: &Problem,
    proposal: &dyn ProposalKernel,
    config: &ExperimentConfig,
    replicate: u64,
    kinds: &[EstimatorKind],
) -> Result<ReplicateOutcome> {
    let (chain, rho_evaluations) = run_replicate_chain(problem, proposal, config, replicate)?;
    let records = chain.post_burn_in();
    let mut estimates = BTreeMap::new();
    let mut proposal_evaluations = 0;
    for &k in kinds {
        let rep = estimate(k, records, &problem.functional, proposal)?;
        proposal_evaluations += rep.proposal_evaluations;
        estimates.insert(k, rep.value);
    }
    Ok(ReplicateOutcome {
        acceptance_rate: acceptance_rate(records)?,
        estimates,
        rho_evaluations,
        proposal_evaluations,
    })
}

/// All replicates at one stepsize.
#[derive(Debug, Clone, PartialEq)]
pub struct StepsizeCell {
    pub s: f64,
    pub replicates: Vec<ReplicateOutcome>,
}

impl StepsizeCell {
    pub fn mean_acceptance(&self) -> f64 {
        self.replicates.iter().map(|r| r.acceptance_rate).sum::<f64>() / self.replicates.len() as f64
    }

    /// Per-replicate values of one estimator, if it was computed here.
    pub fn values(&self, kind: EstimatorKind) -> Option<Vec<&[f64]>> {
        self.replicates
            .iter()
            .map(|r| r.estimates.get(&kind).map(Vec::as_slice))
            .collect()
    }
}

fn run_cell(problem: &Problem, config: &ExperimentConfig, s: f64, kinds: &[EstimatorKind]) -> Result<StepsizeCell> {
    let proposal = make_proposal(problem, config.proposal, config.preconditioner, s)?;
    let replicates = (0..config.n_replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(problem, proposal.as_ref(), config, r, kinds))
        .collect::<Result<Vec<_>>>()?;
    Ok(StepsizeCell { s, replicates })
}

/// Replicate aggregates of one estimator at one stepsize, summed over the
/// components of the functional. `mse = bias_sq + variance` holds up to
/// rounding because `variance` uses the `1/M` normalization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: Vec<f64>,
    pub bias_sq: f64,
    pub variance: f64,
    /// `Σᵢ` of the unbiased (`1/(M−1)`) replicate variance of component `i`.
    pub sample_variance: f64,
    pub mse: f64,
    pub rmse: f64,
}

pub fn aggregate(values: &[&[f64]], truth: &[f64]) -> Result<Aggregate> {
    let m = values.len();
    if m < 2 {
        return Err(Error::InvalidArgument("aggregation needs at least two replicates".into()));
    }
    let k = truth.len();
    if values.iter().any(|v| v.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: values.iter().map(|v| v.len()).find(|&l| l != k).unwrap_or(0),
        });
    }
    let mf = m as f64;
    let mut mean = vec![0.0; k];
    for v in values {
        mean.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += b / mf);
    }
    let mut ss = 0.0;
    let mut mse = 0.0;
    for v in values {
        for i in 0..k {
            ss += (v[i] - mean[i]).powi(2);
            mse += (v[i] - truth[i]).powi(2) / mf;
        }
    }
    let bias_sq = mean.iter().zip(truth).map(|(a, t)| (a - t).powi(2)).sum();
    Ok(Aggregate {
        mean,
        bias_sq,
        variance: ss / mf,
        sample_variance: ss / (mf - 1.0),
        mse,
        rmse: mse.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    pub s: f64,
    pub j_f: f64,
    pub j: f64,
    pub converged: bool,
    /// `|g(s)| / s²` at the calibrated stepsize.
    pub relative_residual: f64,
    pub sign_changes: Vec<(f64, f64)>,
}

impl From<&CalibrationState> for CalibrationSummary {
    fn from(st: &CalibrationState) -> Self {
        let s2 = st.s_current * st.s_current;
        Self {
            s: st.s_current,
            j_f: st.j_f_value,
            j: st.j_value,
            converged: st.converged,
            relative_residual: st.g_value.abs() / s2,
            sign_changes: st.sign_changes.clone(),
        }
    }
}

pub struct ProblemResult {
    pub problem: Problem,
    pub cells: Vec<StepsizeCell>,
    pub calibration: Option<CalibrationState>,
}

impl ProblemResult {
    pub fn truth(&self) -> &[f64] {
        self.problem.truth.as_deref().unwrap_or(&[])
    }

    pub fn aggregate(&self, cell: &StepsizeCell, kind: EstimatorKind) -> Option<Result<Aggregate>> {
        cell.values(kind).map(|v| aggregate(&v, self.truth()))
    }

    /// Stepsize and aggregate minimizing `key` over the cells where `kind`
    /// was computed.
    pub fn optimum_by(
        &self,
        kind: EstimatorKind,
        key: impl Fn(&Aggregate) -> f64,
    ) -> Result<Option<(f64, Aggregate)>> {
        let mut best: Option<(f64, Aggregate)> = None;
        for cell in &self.cells {
            if let Some(agg) = self.aggregate(cell, kind) {
                let agg = agg?;
                if best.as_ref().is_none_or(|(_, b)| key(&agg) < key(b)) {
                    best = Some((cell.s, agg));
                }
            }
        }
        Ok(best)
    }

    pub fn optimum_rmse(&self, kind: EstimatorKind) -> Result<Option<(f64, Aggregate)>> {
        self.optimum_by(kind, |a| a.rmse)
    }

    pub fn optimum_variance(&self, kind: EstimatorKind) -> Result<Option<(f64, Aggregate)>> {
        self.optimum_by(kind, |a| a.variance)
    }

    pub fn cell(&self, s: f64) -> Option<&StepsizeCell> {
        self.cells.iter().find(|c| c.s == s)
    }
}

pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub problems: Vec<ProblemResult>,
}

fn calibration_config(config: &ExperimentConfig, problem: &Problem) -> CalibrationConfig {
    let c = &config.calibration;
    let mut cc = CalibrationConfig::new(c.s_lo, c.s_hi, problem.laplace.mode.clone());
    cc.grid_points = c.grid_points;
    cc.pilot_steps = c.pilot_steps;
    cc.pilot_burn_in = c.pilot_burn_in;
    cc.tol = c.tol;
    cc.max_iters = c.max_iters;
    cc.seed = config.seed;
    cc.stream_id = CALIBRATION_STREAM;
    cc
}

/// Calibrate the `Aₙ` stepsize of one problem from its fixed-point condition.
pub fn calibrate_problem(config: &ExperimentConfig, problem: &Problem) -> Result<CalibrationState> {
    let factory = |s: f64| make_proposal(problem, config.proposal, config.preconditioner, s);
    calibrate_stepsize(
        problem.target.as_ref(),
        &factory,
        &problem.functional,
        &calibration_config(config, problem),
    )
}

pub fn run_calibration(config: &ExperimentConfig) -> Result<Vec<(Problem, CalibrationState)>> {
    config.validate()?;
    build_problems(config)?
        .into_iter()
        .map(|p| {
            let st = calibrate_problem(config, &p)?;
            Ok((p, st))
        })
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let mut results = Vec::new();
    for mut problem in build_problems(config)? {
        let (grid, calibration) = if config.calibrate {
            let st = calibrate_problem(config, &problem)?;
            (vec![st.s_current], Some(st))
        } else {
            (config.stepsize_grid(), None)
        };
        let deferred_b =
            config.b_policy == BPolicy::AtOptimumOfA && config.estimators.contains(&EstimatorKind::B);
        let first_pass: Vec<EstimatorKind> = config
            .estimators
            .iter()
            .copied()
            .filter(|k| !(deferred_b && *k == EstimatorKind::B))
            .collect();
        let mut cells = Vec::with_capacity(grid.len());
        for &s in &grid {
            log::info!("{} d={} s={s}: {} replicates", problem.name, problem.dim, config.n_replicates);
            cells.push(run_cell(&problem, config, s, &first_pass)?);
        }
        if problem.truth.is_none() {
            problem.truth = Some(pooled_mean(&cells, EstimatorKind::S, problem.functional.dim_out)?);
        }
        let mut result = ProblemResult {
            problem,
            cells,
            calibration,
        };
        if deferred_b {
            add_b_at_optimum_of_a(&mut result, config)?;
        }
        results.push(result);
    }
    Ok(ExperimentResult {
        config: config.clone(),
        problems: results,
    })
}

fn pooled_mean(cells: &[StepsizeCell], kind: EstimatorKind, dim: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for c in cells {
        let v = c.values(kind).ok_or_else(|| {
            Error::Config("probit truth is pooled from estimator S, which was not requested".into())
        })?;
        for x in v {
            acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
            count += 1;
        }
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    Ok(acc)
}

/// Rerun the replicate chains at the RMSE(`Aₙ`)-optimal stepsize (they are
/// reproduced exactly from their streams) and add `Bₙ` there.
fn add_b_at_optimum_of_a(result: &mut ProblemResult, config: &ExperimentConfig) -> Result<()> {
    let Some((s, _)) = result.optimum_rmse(EstimatorKind::A)? else {
        return Ok(());
    };
    let problem = &result.problem;
    let proposal = make_proposal(problem, config.proposal, config.preconditioner, s)?;
    let b: Vec<(Vec<f64>, u64)> = (0..config.n_replicates as u64)
        .into_par_iter()
        .map(|r| {
            let (chain, _) = run_replicate_chain(problem, proposal.as_ref(), config, r)?;
            let rep = estimate(EstimatorKind::B, chain.post_burn_in(), &problem.functional, proposal.as_ref())?;
            Ok((rep.value, rep.proposal_evaluations))
        })
        .collect::<Result<_>>()?;
    let cell = result
        .cells
        .iter_mut()
        .find(|c| c.s == s)
        .expect("optimum comes from an existing cell");
    for (rep, (value, evals)) in cell.replicates.iter_mut().zip(b) {
        rep.estimates.insert(EstimatorKind::B, value);
        rep.proposal_evaluations += evals;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    #[serde(flatten)]
    pub aggregate: Aggregate,
    /// Total variance relative to `Sₙ` at the same stepsize.
    pub variance_ratio_vs_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub s: f64,
    pub acceptance_rate: f64,
    pub rho_evaluations_per_chain: u64,
    pub proposal_evaluations: u64,
    pub estimators: Vec<EstimatorSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimumSummary {
    pub estimator: EstimatorKind,
    pub s_min_rmse: f64,
    pub rmse: f64,
    pub s_min_variance: f64,
    pub variance: f64,
    /// Minimal total variance over the grid relative to that of `Sₙ`.
    pub min_variance_ratio_vs_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemSummary {
    pub problem: &'static str,
    pub proposal: ProposalChoice,
    pub dim: usize,
    pub truth: Vec<f64>,
    pub truth_source: String,
    pub n_steps: usize,
    pub burn_in: usize,
    pub n_replicates: usize,
    pub calibration: Option<CalibrationSummary>,
    pub cells: Vec<CellSummary>,
    pub optima: Vec<OptimumSummary>,
}

impl ExperimentResult {
    pub fn summaries(&self) -> Result<Vec<ProblemSummary>> {
        self.problems.iter().map(|p| self.summarize(p)).collect()
    }

    fn summarize(&self, pr: &ProblemResult) -> Result<ProblemSummary> {
        let cfg = &self.config;
        let mut cells = Vec::new();
        for cell in &pr.cells {
            let s_var = pr.aggregate(cell, EstimatorKind::S).transpose()?.map(|a| a.variance);
            let mut estimators = Vec::new();
            for &k in &cfg.estimators {
                if let Some(agg) = pr.aggregate(cell, k).transpose()? {
                    estimators.push(EstimatorSummary {
                        estimator: k,
                        variance_ratio_vs_s: s_var.map(|v| agg.variance / v),
                        aggregate: agg,
                    });
                }
            }
            cells.push(CellSummary {
                s: cell.s,
                acceptance_rate: cell.mean_acceptance(),
                rho_evaluations_per_chain: cell.replicates.first().map_or(0, |r| r.rho_evaluations),
                proposal_evaluations: cell.replicates.iter().map(|r| r.proposal_evaluations).sum(),
                estimators,
            });
        }
        let s_min_var = pr.optimum_variance(EstimatorKind::S)?.map(|(_, a)| a.variance);
        let mut optima = Vec::new();
        for &k in &cfg.estimators {
            if let (Some((s_r, a_r)), Some((s_v, a_v))) = (pr.optimum_rmse(k)?, pr.optimum_variance(k)?) {
                optima.push(OptimumSummary {
                    estimator: k,
                    s_min_rmse: s_r,
                    rmse: a_r.rmse,
                    s_min_variance: s_v,
                    variance: a_v.variance,
                    min_variance_ratio_vs_s: s_min_var.map(|v| a_v.variance / v),
                });
            }
        }
        Ok(ProblemSummary {
            problem: pr.problem.name,
            proposal: cfg.proposal,
            dim: pr.problem.dim,
            truth: pr.truth().to_vec(),
            truth_source: pr.problem.truth_source.clone(),
            n_steps: cfg.n_steps,
            burn_in: cfg.burn_in(),
            n_replicates: cfg.n_replicates,
            calibration: pr.calibration.as_ref().map(CalibrationSummary::from),
            cells,
            optima,
        })
    }

    /// Long format: one row per (stepsize, estimator, replicate, component).
    pub fn write_results_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["problem", "proposal", "dim", "s", "estimator", "replicate", "component", "value"])?;
        let proposal = proposal_label(self.config.proposal);
        for pr in &self.problems {
            for cell in &pr.cells {
                for &k in &self.config.estimators {
                    for (r, rep) in cell.replicates.iter().enumerate() {
                        if let Some(v) = rep.estimates.get(&k) {
                            for (i, x) in v.iter().enumerate() {
                                w.write_record([
                                    pr.problem.name.to_string(),
                                    proposal.to_string(),
                                    pr.problem.dim.to_string(),
                                    cell.s.to_string(),
                                    k.label().to_string(),
                                    r.to_string(),
                                    i.to_string(),
                                    x.to_string(),
                                ])?;
                            }
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per (stepsize, replicate) with the chain's acceptance rate.
    pub fn write_acceptance_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["problem", "proposal", "dim", "s", "replicate", "acceptance_rate"])?;
        let proposal = proposal_label(self.config.proposal);
        for pr in &self.problems {
            for cell in &pr.cells {
                for (r, rep) in cell.replicates.iter().enumerate() {
                    w.write_record([
                        pr.problem.name.to_string(),
                        proposal.to_string(),
                        pr.problem.dim.to_string(),
                        cell.s.to_string(),
                        r.to_string(),
                        rep.acceptance_rate.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Write `results.csv`, `acceptance.csv` and `summary.json` into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.write_results_csv(fs::File::create(dir.join("results.csv"))?)?;
        self.write_acceptance_csv(fs::File::create(dir.join("acceptance.csv"))?)?;
        let summary = self.summaries()?;
        let file = fs::File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(file, &summary)?;
        for pr in &self.problems {
            if let Some(st) = &pr.calibration {
                let name = format!("calibration_{}_d{}.csv", pr.problem.name, pr.problem.dim);
                st.write_audit_csv(fs::File::create(dir.join(name))?)?;
            }
        }
        Ok(())
    }
}

fn proposal_label(p: ProposalChoice) -> &'static str {
    match p {
        ProposalChoice::Rw => "rw",
        ProposalChoice::Mala => "mala",
    }
}

/// Write the augmented chain of replicate 0 at the first stepsize (or the
/// calibrated one) of the first problem.
pub fn dump_chain<W: Write>(config: &ExperimentConfig, writer: W) -> Result<()> {
    config.validate()?;
    let problem = build_problems(config)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config("no problem to run".into()))?;
    let s = if config.calibrate {
        calibrate_problem(config, &problem)?.s_current
    } else {
        config.stepsize_grid()[0]
    };
    let proposal = make_proposal(&problem, config.proposal, config.preconditioner, s)?;
    let (chain, _) = run_replicate_chain(&problem, proposal.as_ref(), config, 0)?;
    write_chain_csv(chain.post_burn_in(), writer)
}

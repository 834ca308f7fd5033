use mhis::density::{FnTarget, GaussianRandomWalk, RngStream, TargetDensity};
use mhis::estimators::{
    default_batches, estimate_a, estimate_s, estimate_sigma2_s_batchmeans, normalized_weights, Functional,
};
use mhis::experiment::{run_calibration, ExperimentConfig, ProblemKind, ProposalChoice};
use mhis::problems::{
    laplace_approximation, synthetic_pima, GaussianTarget, ProbitPosterior, SYNTHETIC_PIMA_BETA, SYNTHETIC_PIMA_SEED,
};
use mhis::sampler::{run_chain, ChainRunConfig};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

const PRIOR: [f64; 2] = [2.0, 0.5];
const NOISE: [f64; 2] = [0.3, 0.8];
const DATA: [f64; 2] = [1.2, -0.7];

fn log_likelihood(u: &[f64]) -> f64 {
    (0..2).map(|i| -0.5 * (DATA[i] - u[i]).powi(2) / NOISE[i]).sum()
}

fn log_prior(u: &[f64]) -> f64 {
    (0..2).map(|i| -0.5 * u[i] * u[i] / PRIOR[i]).sum()
}

#[test]
fn prior_placement_gives_identical_importance_estimate() {
    // Lebesgue formulation: target is likelihood times prior density.
    // Prior-relative formulation: weight is the likelihood over the
    // proposal density taken w.r.t. the prior.
    let target = FnTarget::new(2, |u| log_likelihood(u) + log_prior(u));
    let p = GaussianRandomWalk::isotropic(2, 1.1).unwrap();
    let mut rng = RngStream::new(11, 0);
    let chain = run_chain(&target, &p, &ChainRunConfig::new(20_000, vec![0.0, 0.0]), &mut rng).unwrap();
    let f = Functional::identity(2);
    let lebesgue = estimate_a(&chain.records, &f).unwrap().value;

    let relative: Vec<f64> = chain
        .records
        .iter()
        .map(|r| log_likelihood(&r.y) - (r.log_proposal_xy - log_prior(&r.y)))
        .collect();
    let (w, _) = normalized_weights(&relative).unwrap();
    for c in 0..2 {
        let v: f64 = chain.records.iter().zip(&w).map(|(r, wk)| wk * r.y[c]).sum();
        assert!((v - lebesgue[c]).abs() < 1e-12, "{v} vs {}", lebesgue[c]);
    }
    // Both agree with the conjugate posterior mean up to Monte Carlo error.
    for c in 0..2 {
        let exact = PRIOR[c] / (PRIOR[c] + NOISE[c]) * DATA[c];
        assert!((lebesgue[c] - exact).abs() < 0.05, "{} vs {exact}", lebesgue[c]);
    }
}

#[test]
fn batch_means_matches_replicate_spread() {
    let target = GaussianTarget::standard(1);
    let p = GaussianRandomWalk::isotropic(1, 2.38).unwrap();
    let f = Functional::identity(1);
    let n = 10_000;
    let reps = 100;
    let mut sq = 0.0;
    let mut sigma2 = 0.0;
    for r in 0..reps {
        let mut rng = RngStream::new(21, r);
        let x0: f64 = StandardNormal.sample(&mut rng);
        let chain = run_chain(&target, &p, &ChainRunConfig::new(n, vec![x0]).with_burn_in(1_000), &mut rng).unwrap();
        sq += estimate_s(&chain.records, &f).unwrap().value[0].powi(2);
        sigma2 += estimate_sigma2_s_batchmeans(&chain.records, &f, default_batches(n)).unwrap()[0];
    }
    let rmse = (sq / reps as f64).sqrt();
    let predicted = (sigma2 / reps as f64 / n as f64).sqrt();
    let rel = (rmse - predicted).abs() / rmse;
    assert!(rel < 0.3, "RMSE {rmse} vs batch-means prediction {predicted}");
}

#[test]
fn flat_prior_mode_recovers_generating_coefficients() {
    let data = synthetic_pima(SYNTHETIC_PIMA_SEED);
    let d = 9;
    let target = ProbitPosterior::with_prior(&data, d, vec![1e12; d]).unwrap();
    let la = laplace_approximation(&target, &[0.0; 9]).unwrap();
    let diff = DVector::from_iterator(d, la.mode.iter().zip(&SYNTHETIC_PIMA_BETA).map(|(a, b)| a - b));
    let cov = DMatrix::from_row_slice(d, d, &la.covariance);
    let chi2 = (diff.transpose() * cov.try_inverse().unwrap() * &diff)[0];
    // 0.999 quantile of the chi-square law with 9 degrees of freedom.
    assert!(chi2 < 27.88, "Mahalanobis distance {chi2}, mode {:?}", la.mode);
    for (i, (m, s)) in la.mode.iter().zip(la.std_devs()).enumerate() {
        let z = (m - SYNTHETIC_PIMA_BETA[i]) / s;
        assert!(z.abs() < 4.0, "coefficient {i}: z = {z}");
    }
    assert!(target.log_density(&la.mode) > target.log_density(&SYNTHETIC_PIMA_BETA));
}

fn calibrated_residual(proposal: ProposalChoice) -> (f64, bool) {
    let mut c = ExperimentConfig::new(ProblemKind::Bvp, proposal, 1_000, 2);
    c.calibrate = true;
    c.seed = 5;
    let mut out = run_calibration(&c).unwrap();
    let (_, state) = out.pop().unwrap();
    let s2 = state.s_current * state.s_current;
    (state.g_value.abs() / s2, state.converged)
}

#[test]
fn bvp_calibration_reaches_fixed_point() {
    for proposal in [ProposalChoice::Rw, ProposalChoice::Mala] {
        let (residual, converged) = calibrated_residual(proposal);
        assert!(converged && residual < 0.05, "{proposal:?}: residual {residual}");
    }
}

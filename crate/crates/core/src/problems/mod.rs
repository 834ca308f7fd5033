//! Concrete targets and reference values: Gaussian toys, the groundwater
//! boundary-value posterior, the probit posterior, Gauss–Hermite oracles and
//! the Laplace approximation used to center them.

mod bvp;
mod gaussian;
mod laplace;
mod probit;
mod quadrature;

pub use bvp::{bvp_forward, BvpPosterior, BVP_OBSERVATION, BVP_OBSERVATION_POINTS};
pub use gaussian::GaussianTarget;
pub use laplace::{fd_hessian, laplace_approximation, LaplaceApproximation};
pub use probit::{
    load_pima, log_normal_cdf, synthetic_pima, PimaData, ProbitPosterior, PIMA_FEATURES,
    SYNTHETIC_PIMA_BETA, SYNTHETIC_PIMA_SEED,
};
pub use quadrature::{
    gauss_hermite, gauss_legendre, gh_posterior_mean, gh_posterior_mean_converged,
    QuadratureOracle, QuadratureResult,
};

//! Metropolis–Hastings importance sampling.
//!
//! A Metropolis–Hastings run produces, at every step, a current state `Xₖ`
//! and a proposed state `Yₖ`. The classical path average only uses the
//! `Xₖ`. This crate keeps the full augmented chain `(Xₖ, Yₖ)` and builds the
//! self-normalized importance sampling estimator
//!
//! ```text
//! Aₙ(f) = Σ ρ̄(Xₖ,Yₖ) f(Yₖ) / Σ ρ̄(Xₖ,Yₖ),    ρ̄(x,y) = ρ(y) / p(x,y)
//! ```
//!
//! next to the path average `Sₙ`, the waste-recycling estimator `WRₙ` and
//! the mixture-weighted estimator `Bₙ`. It also provides
//!
//! * stepsize calibration for `Aₙ` from the first-order condition
//!   `s² ≈ J_f(s)` ([`calibration`]),
//! * exact matrix checks of the augmented kernel on finite state spaces
//!   ([`finite`]),
//! * the groundwater boundary-value and probit posteriors plus
//!   Gauss–Hermite reference values ([`problems`]),
//! * a replicate experiment runner producing RMSE and variance tables
//!   ([`experiment`]).
//!
//! ```
//! use mhis::density::{GaussianRandomWalk, RngStream};
//! use mhis::estimators::{estimate_a, estimate_s, Functional};
//! use mhis::problems::GaussianTarget;
//! use mhis::sampler::{run_chain, ChainRunConfig};
//!
//! let target = GaussianTarget::standard(1);
//! let proposal = GaussianRandomWalk::isotropic(1, 2.0).unwrap();
//! let mut rng = RngStream::new(7, 0);
//! let config = ChainRunConfig::new(5_000, vec![0.0]);
//! let chain = run_chain(&target, &proposal, &config, &mut rng).unwrap();
//!
//! let f = Functional::identity(1);
//! let a = estimate_a(&chain.records, &f).unwrap();
//! let s = estimate_s(&chain.records, &f).unwrap();
//! assert!(a.value[0].abs() < 0.2 && s.value[0].abs() < 0.3);
//! ```

pub mod calibration;
pub mod density;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod finite;
pub mod linalg;
pub mod problems;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};

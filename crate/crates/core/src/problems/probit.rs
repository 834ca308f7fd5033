//! Bayesian probit regression on the PIMA diabetes table.
//!
//! Rows are `xᵢ = (1, pregnancies, glucose, blood pressure, skin thickness,
//! insulin, BMI, pedigree, age)` with labels `yᵢ ∈ {−1, +1}`; features are
//! used raw. The target in dimension `d` keeps the first `d` coefficients
//! and pins the rest to zero.

use std::f64::consts::FRAC_1_SQRT_2;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, Poisson};

use crate::density::TargetDensity;
use crate::{Error, Result};

/// Feature order after the intercept column.
pub const PIMA_FEATURES: [&str; 8] = [
    "pregnancies",
    "glucose",
    "blood_pressure",
    "skin_thickness",
    "insulin",
    "bmi",
    "pedigree",
    "age",
];

pub const PIMA_ROWS: usize = 768;

/// Seed of the synthetic stand-in table.
pub const SYNTHETIC_PIMA_SEED: u64 = 19_880_401;

/// Probit coefficients that generate the synthetic labels, ordered as
/// `(intercept, PIMA_FEATURES…)`.
pub const SYNTHETIC_PIMA_BETA: [f64; 9] = [
    -4.9, 0.07, 0.02, -0.0077, 0.0003, -0.0007, 0.052, 0.52, 0.0087,
];

/// Design matrix with an intercept column and ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PimaData {
    /// Row-major `n × 9`.
    pub design: Vec<f64>,
    pub labels: Vec<f64>,
    pub n_cols: usize,
}

impl PimaData {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// Read a comma-separated table of 8 feature columns followed by a 0/1
/// outcome. A header row is detected and skipped.
pub fn load_pima(path: impl AsRef<Path>) -> Result<PimaData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut design = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        if row == 0 && rec.iter().any(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != 9 {
            return Err(Error::MalformedData {
                row,
                message: format!("expected 9 columns, found {}", rec.len()),
            });
        }
        let mut vals = [0.0; 9];
        for (v, cell) in vals.iter_mut().zip(rec.iter()) {
            *v = cell.parse().map_err(|_| Error::MalformedData {
                row,
                message: format!("non-numeric cell '{cell}'"),
            })?;
        }
        let label = match vals[8] {
            v if v == 0.0 => -1.0,
            v if v == 1.0 => 1.0,
            v => {
                return Err(Error::MalformedData {
                    row,
                    message: format!("outcome must be 0 or 1, got {v}"),
                })
            }
        };
        design.push(1.0);
        design.extend_from_slice(&vals[..8]);
        labels.push(label);
    }
    if labels.len() != PIMA_ROWS {
        log::warn!("PIMA table has {} rows, expected {PIMA_ROWS}", labels.len());
    }
    Ok(PimaData {
        design,
        labels,
        n_cols: 9,
    })
}

/// A 768-row table with PIMA-like feature marginals and labels drawn from
/// the probit model with [`SYNTHETIC_PIMA_BETA`].
pub fn synthetic_pima(seed: u64) -> PimaData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preg = Poisson::<f64>::new(3.8).unwrap();
    let glucose = Normal::<f64>::new(121.0, 30.0).unwrap();
    let bp = Normal::<f64>::new(69.0, 12.0).unwrap();
    let skin = Normal::<f64>::new(20.5, 16.0).unwrap();
    let insulin = LogNormal::<f64>::new(4.2, 0.9).unwrap();
    let bmi = Normal::<f64>::new(32.0, 7.0).unwrap();
    let pedigree = LogNormal::<f64>::new(-0.95, 0.6).unwrap();
    let age = Gamma::<f64>::new(1.6, 7.5).unwrap();
    let noise = Normal::<f64>::new(0.0, 1.0).unwrap();

    let mut design = Vec::with_capacity(PIMA_ROWS * 9);
    let mut labels = Vec::with_capacity(PIMA_ROWS);
    for _ in 0..PIMA_ROWS {
        let row = [
            1.0,
            preg.sample(&mut rng).min(17.0),
            glucose.sample(&mut rng).clamp(44.0, 199.0).round(),
            bp.sample(&mut rng).clamp(24.0, 122.0).round(),
            skin.sample(&mut rng).clamp(0.0, 99.0).round(),
            if rng.random::<f64>() < 0.49 { 0.0 } else { insulin.sample(&mut rng).min(846.0).round() },
            (bmi.sample(&mut rng).clamp(18.0, 67.0) * 10.0).round() / 10.0,
            (pedigree.sample(&mut rng).clamp(0.078, 2.42) * 1000.0).round() / 1000.0,
            (21.0 + age.sample(&mut rng)).min(81.0).floor(),
        ];
        let eta: f64 = row.iter().zip(&SYNTHETIC_PIMA_BETA).map(|(a, b)| a * b).sum();
        labels.push(if eta + noise.sample(&mut rng) > 0.0 { 1.0 } else { -1.0 });
        design.extend_from_slice(&row);
    }
    PimaData {
        design,
        labels,
        n_cols: 9,
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `log Φ(t)`. Uses `erfc` down to `t = −8` and the asymptotic Mills-ratio
/// series below.
pub fn log_normal_cdf(t: f64) -> f64 {
    if t > 0.0 {
        (-0.5 * libm::erfc(t * FRAC_1_SQRT_2)).ln_1p()
    } else if t >= -8.0 {
        (0.5 * libm::erfc(-t * FRAC_1_SQRT_2)).ln()
    } else {
        // Φ(t) ~ φ(t)/|t| · Σ (−1)ᵏ (2k−1)!! / t²ᵏ
        let inv = 1.0 / (t * t);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=10 {
            term *= -((2 * k - 1) as f64) * inv;
            sum += term;
        }
        -0.5 * t * t - LN_SQRT_2PI - (-t).ln() + sum.ln()
    }
}

/// `φ(t) / Φ(t)`.
fn inverse_mills(t: f64) -> f64 {
    (-0.5 * t * t - LN_SQRT_2PI - log_normal_cdf(t)).exp()
}

/// Probit posterior in dimension `d` with a `N(0, diag(λ))` prior folded into
/// the target (`λ₁ = 20`, `λᵢ = 5` otherwise).
#[derive(Debug, Clone)]
pub struct ProbitPosterior {
    dim: usize,
    /// Row-major `n × d` matrix of `yᵢ xᵢ[..d]`.
    signed_rows: Vec<f64>,
    prior_variances: Vec<f64>,
}

impl ProbitPosterior {
    pub fn new(data: &PimaData, dim: usize) -> Result<Self> {
        let variances = (0..dim).map(|i| if i == 0 { 20.0 } else { 5.0 }).collect();
        Self::with_prior(data, dim, variances)
    }

    pub fn with_prior(data: &PimaData, dim: usize, prior_variances: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > data.n_cols {
            return Err(Error::InvalidArgument(format!(
                "probit dimension {dim} outside 1..={}",
                data.n_cols
            )));
        }
        if prior_variances.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: prior_variances.len(),
            });
        }
        let mut signed_rows = Vec::with_capacity(data.n_rows() * dim);
        for i in 0..data.n_rows() {
            let y = data.labels[i];
            if y != 1.0 && y != -1.0 {
                return Err(Error::MalformedData {
                    row: i,
                    message: format!("label {y} is not ±1"),
                });
            }
            signed_rows.extend(data.row(i)[..dim].iter().map(|x| y * x));
        }
        Ok(Self {
            dim,
            signed_rows,
            prior_variances,
        })
    }

    pub fn prior_variances(&self) -> &[f64] {
        &self.prior_variances
    }

    /// `Σᵢ log Φ(yᵢ βᵀxᵢ)` and optionally its gradient.
    pub fn log_likelihood(&self, beta: &[f64], with_gradient: bool) -> (f64, Option<Vec<f64>>) {
        let d = self.dim;
        let mut ll = 0.0;
        let mut grad = with_gradient.then(|| vec![0.0; d]);
        for row in self.signed_rows.chunks_exact(d) {
            let z: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            ll += log_normal_cdf(z);
            if let Some(g) = grad.as_mut() {
                let m = inverse_mills(z);
                g.iter_mut().zip(row).for_each(|(gi, xi)| *gi += m * xi);
            }
        }
        (ll, grad)
    }
}

impl TargetDensity for ProbitPosterior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, beta: &[f64]) -> f64 {
        self.evaluate(beta, false).0
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn evaluate(&self, beta: &[f64], with_gradient: bool) -> (f64, Option<Vec<f64>>) {
        let (ll, grad) = self.log_likelihood(beta, with_gradient);
        let prior: f64 = beta
            .iter()
            .zip(&self.prior_variances)
            .map(|(b, v)| b * b / v)
            .sum();
        let grad = grad.map(|mut g| {
            g.iter_mut()
                .zip(beta.iter().zip(&self.prior_variances))
                .for_each(|(gi, (b, v))| *gi -= b / v);
            g
        });
        (ll - 0.5 * prior, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{finite_difference_gradient, relative_error, RngStream};
    use rand::Rng;

    #[test]
    fn log_cdf_is_continuous_and_accurate() {
        assert!((log_normal_cdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
        let below = log_normal_cdf(-8.0 - 1e-12);
        let above = log_normal_cdf(-8.0);
        assert!(relative_error(below, above, 1.0) < 1e-9);
        // Φ(−10) = 7.619853024160527e−24
        assert!(relative_error(log_normal_cdf(-10.0), 7.619_853_024_160_527e-24f64.ln(), 1.0) < 1e-10);
        // log Φ(5) = log(1 − 2.866515718791939e−7)
        assert!(relative_error(log_normal_cdf(5.0), -2.866_516_129_637_636e-7, 1e-30) < 1e-8);
        assert!(log_normal_cdf(-40.0).is_finite());
    }

    #[test]
    fn zero_beta_gives_half_per_row() {
        let data = synthetic_pima(SYNTHETIC_PIMA_SEED);
        let t = ProbitPosterior::new(&data, 9).unwrap();
        let (ll, _) = t.log_likelihood(&[0.0; 9], false);
        assert!((ll - 768.0 * 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn label_flip_negates_beta() {
        let data = synthetic_pima(SYNTHETIC_PIMA_SEED);
        let mut flipped = data.clone();
        flipped.labels.iter_mut().for_each(|y| *y = -*y);
        let a = ProbitPosterior::new(&data, 4).unwrap();
        let b = ProbitPosterior::new(&flipped, 4).unwrap();
        let beta = [-1.0, 0.05, 0.003, -0.01];
        let neg: Vec<f64> = beta.iter().map(|v| -v).collect();
        let (la, _) = a.log_likelihood(&beta, false);
        let (lb, _) = b.log_likelihood(&neg, false);
        assert!((la - lb).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_fd() {
        // Raw features span three orders of magnitude, so the check runs in
        // coordinates γⱼ = cⱼ βⱼ with cⱼ the RMS of column j.
        let data = synthetic_pima(SYNTHETIC_PIMA_SEED);
        let t = ProbitPosterior::new(&data, 9).unwrap();
        let n = data.n_rows() as f64;
        let col_scale: Vec<f64> = (0..9)
            .map(|j| ((0..data.n_rows()).map(|i| data.row(i)[j].powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        let mut rng = RngStream::new(5, 0);
        let spread = [1.0, 0.05, 0.005, 0.005, 0.005, 0.001, 0.02, 0.2, 0.01];
        for _ in 0..50 {
            let beta: Vec<f64> = SYNTHETIC_PIMA_BETA
                .iter()
                .zip(&spread)
                .map(|(b, s)| b + s * rng.random_range(-1.0..1.0))
                .collect();
            let gamma: Vec<f64> = beta.iter().zip(&col_scale).map(|(b, c)| b * c).collect();
            let g = t.grad_log_density(&beta).unwrap();
            let fd = finite_difference_gradient(
                |v| {
                    let b: Vec<f64> = v.iter().zip(&col_scale).map(|(g, c)| g / c).collect();
                    t.log_density(&b)
                },
                &gamma,
            );
            for ((a, b), c) in g.iter().zip(&fd).zip(&col_scale) {
                assert!(relative_error(a / c, *b, 1e-2) < 1e-5, "{} vs {b}", a / c);
            }
        }
    }

    #[test]
    fn synthetic_table_shape() {
        let d = synthetic_pima(SYNTHETIC_PIMA_SEED);
        assert_eq!(d.n_rows(), 768);
        assert_eq!(d.n_cols, 9);
        assert!(d.labels.iter().all(|&y| y == 1.0 || y == -1.0));
        let pos = d.labels.iter().filter(|&&y| y > 0.0).count();
        assert!(pos > 100 && pos < 500, "{pos} positives");
        assert_eq!(synthetic_pima(SYNTHETIC_PIMA_SEED), d);
    }
}

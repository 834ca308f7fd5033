//! Plain descriptive statistics on `f64` slices.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (`n − 1` denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Population variance (`n` denominator); with it `mse = bias² + variance`
/// holds exactly.
pub fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Mean squared error of `xs` around `truth`.
pub fn mse(xs: &[f64], truth: f64) -> f64 {
    xs.iter().map(|x| (x - truth) * (x - truth)).sum::<f64>() / xs.len() as f64
}

/// Empirical autocorrelations at lags `0..=max_lag` of an already centered
/// series, using the biased `1/n` autocovariance. `None` for zero variance.
pub fn autocorrelation_centered(xs: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = xs.len();
    let c0: f64 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return None;
    }
    Some(
        (0..=max_lag)
            .map(|lag| {
                let c: f64 = xs[..n - lag]
                    .iter()
                    .zip(&xs[lag..])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / n as f64;
                c / c0
            })
            .collect(),
    )
}

/// Autocorrelations after subtracting the sample mean.
pub fn autocorrelation(xs: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let m = mean(xs);
    let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
    autocorrelation_centered(&centered, max_lag)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Kolmogorov–Smirnov statistic of a sample against a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

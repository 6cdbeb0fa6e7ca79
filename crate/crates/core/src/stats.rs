//! Estimators and hypothesis tests shared by every experiment.

use serde::{Deserialize, Serialize};
use statrs::function::{erf::erfc, gamma::gamma_ur};
use thiserror::Error;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("log-log fit needs positive data, got ({x}, {y})")]
    NonPositive { x: f64, y: f64 },
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("expected count {0} in some cell is below 5")]
    ExpectedTooSmall(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Sample mean with normal-approximation 95% interval.
pub fn mean_ci(samples: &[f64]) -> Result<MeanCi, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let stderr = (var / n as f64).sqrt();
    Ok(MeanCi {
        n,
        mean,
        stderr,
        lo: mean - Z95 * stderr,
        hi: mean + Z95 * stderr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    pub r2: f64,
    pub n_points: usize,
    pub cutoff: f64,
}

/// Ordinary least squares `y = intercept + slope·x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<FitResult, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::Domain("x and y lengths differ".into()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(StatsError::Domain("all x values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let stderr_slope = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(FitResult {
        slope,
        intercept,
        stderr_slope,
        r2,
        n_points: n,
        cutoff: f64::NEG_INFINITY,
    })
}

/// Least squares on `(ln x, ln y)` over points with `x >= cutoff`.
pub fn loglog_fit(points: &[(f64, f64)], cutoff: f64) -> Result<FitResult, StatsError> {
    let mut lx = Vec::with_capacity(points.len());
    let mut ly = Vec::with_capacity(points.len());
    for &(x, y) in points.iter().filter(|(x, _)| *x >= cutoff) {
        if !(x > 0.0 && y > 0.0) {
            return Err(StatsError::NonPositive { x, y });
        }
        lx.push(x.ln());
        ly.push(y.ln());
    }
    let mut fit = linear_fit(&lx, &ly)?;
    fit.cutoff = cutoff;
    Ok(fit)
}

/// Upper tail of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Pooled two-proportion z-test; returns `(z, two-sided p-value)`.
pub fn two_proportion_test(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<(f64, f64), StatsError> {
    if n1 < 30 || n2 < 30 {
        return Err(StatsError::TooFewSamples {
            needed: 30,
            got: n1.min(n2) as usize,
        });
    }
    if k1 > n1 || k2 > n2 {
        return Err(StatsError::Domain("successes exceed trials".into()));
    }
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let var = pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64);
    if var == 0.0 {
        // Both samples all-success or all-failure: identical proportions.
        return Ok((0.0, 1.0));
    }
    let z = (p1 - p2) / var.sqrt();
    Ok((z, (2.0 * normal_sf(z.abs())).min(1.0)))
}

/// Survival function of the chi-square distribution with `dof` degrees.
pub fn chi2_sf(stat: f64, dof: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof / 2.0, stat / 2.0)
}

/// Pearson goodness of fit against cell probabilities `probs`.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<(f64, f64), StatsError> {
    if counts.len() != probs.len() {
        return Err(StatsError::Domain("counts and probabilities differ in length".into()));
    }
    if counts.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: counts.len(),
        });
    }
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    for (&c, &p) in counts.iter().zip(probs) {
        let expected = p * total as f64;
        if expected < 5.0 {
            return Err(StatsError::ExpectedTooSmall(expected));
        }
        let d = c as f64 - expected;
        stat += d * d / expected;
    }
    Ok((stat, chi2_sf(stat, (counts.len() - 1) as f64)))
}

pub fn chi_square_uniform(counts: &[u64]) -> Result<(f64, f64), StatsError> {
    let k = counts.len().max(1);
    chi_square_gof(counts, &vec![1.0 / k as f64; counts.len()])
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Two-sample Kolmogorov–Smirnov test; returns `(D, asymptotic p-value)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64), StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok((d, kolmogorov_sf(lambda)))
}

fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

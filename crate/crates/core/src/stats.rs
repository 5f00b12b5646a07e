//! Sample moments, the one-sample Kolmogorov-Smirnov test against a normal
//! law, and Q-Q pairs.

use libm::erfc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate predicted law; use concentration check instead")]
    DegenerateLaw,
}

/// Mean and unbiased variance with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub count: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
}

impl MomentSummary {
    pub fn from_samples(xs: &[f64]) -> Result<Self, StatsError> {
        let m = xs.len();
        if m < 2 {
            return Err(StatsError::TooFewSamples { needed: 2, got: m });
        }
        let mf = m as f64;
        let mean = xs.iter().sum::<f64>() / mf;
        let variance = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (mf - 1.0);
        Ok(Self {
            count: m,
            mean,
            mean_se: (variance / mf).sqrt(),
            variance,
            variance_se: variance * (2.0 / (mf - 1.0)).sqrt(),
        })
    }
}

/// Standard normal CDF, `Phi(x) = erfc(-x / sqrt 2) / 2`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `Phi^{-1}(p)` by bisection on [`normal_cdf`] followed by a Newton polish.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let (mut lo, mut hi) = (-38.5f64, 38.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if density > 0.0 {
        let step = (normal_cdf(x) - p) / density;
        // only accept the polish when it stays inside the bracket
        if (x - step) >= lo && (x - step) <= hi {
            return x - step;
        }
    }
    x
}

/// Type-7 (linear interpolation) quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted_copy(xs), 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Smallest sample size for which the asymptotic p-value is reported.
pub const KS_MIN_SAMPLES: usize = 100;

/// Kolmogorov tail `Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        // the alternating series has not started to converge; Q is 1 to double precision here
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn ks_test(samples: &[f64], mu: f64, sigma2: f64) -> Result<KsResult, StatsError> {
    if sigma2.is_nan() || sigma2 <= 0.0 {
        return Err(StatsError::DegenerateLaw);
    }
    let m = samples.len();
    if m < KS_MIN_SAMPLES {
        return Err(StatsError::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: m,
        });
    }
    let sigma = sigma2.sqrt();
    let mf = m as f64;
    let d = sorted_copy(samples)
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf((x - mu) / sigma);
            ((i + 1) as f64 / mf - f).max(f - i as f64 / mf)
        })
        .fold(0.0f64, f64::max);
    let root = mf.sqrt();
    let p = kolmogorov_q((root + 0.12 + 0.11 / root) * d);
    Ok(KsResult {
        statistic: d,
        p_value: p,
        n: m,
    })
}

/// Pairs `(mu + sigma Phi^{-1}((i - 0.5)/M), x_(i))` for `i = 1..M`.
pub fn qq_points(samples: &[f64], mu: f64, sigma2: f64) -> Result<Vec<(f64, f64)>, StatsError> {
    let m = samples.len();
    if m < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: m });
    }
    let sigma = sigma2.max(0.0).sqrt();
    Ok(sorted_copy(samples)
        .into_iter()
        .enumerate()
        .map(|(i, x)| (mu + sigma * normal_quantile((i as f64 + 0.5) / m as f64), x))
        .collect())
}

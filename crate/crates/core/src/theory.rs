//! Limiting constants for the centered largest eigenvalue and exact
//! finite-`n` moments of the quadratic forms `1'W1` and `1'W^2 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::Kernel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("theta must be positive, got {0}")]
    NonPositiveTheta(f64),
}

/// Relative size of `|total_sum|` against `abs_sum` below which the kernel is
/// treated as degenerate (`sigma2 = 0`).
pub const DEGENERATE_REL_TOL: f64 = 1e-12;

/// Asymptotic law `lambda_1 - center => N(alpha, sigma2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub center: f64,
    pub alpha: f64,
    pub sigma2: f64,
    /// The kernel sums to zero: the centered eigenvalue concentrates at 0.
    pub degenerate: bool,
}

impl Predictions {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Exact moments at a fixed size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteNOracles {
    pub n: usize,
    /// `Var(1'W1)`.
    pub var_quad: f64,
    /// `E(1'W^2 1)`.
    pub mean_w2: f64,
}

pub fn predict(kernel: &Kernel, theta: f64, n: usize) -> Result<Predictions, TheoryError> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(TheoryError::NonPositiveTheta(theta));
    }
    let axis_sum: f64 = kernel
        .iter()
        .map(|(&(u, v), &r)| {
            let mut s = 0.0;
            if v == 0 {
                s += r;
            }
            if u == 0 {
                s += r;
            }
            s
        })
        .sum();
    let degenerate = kernel.total_sum().abs() <= DEGENERATE_REL_TOL * kernel.abs_sum();
    Ok(Predictions {
        center: 2.0 * n as f64 * theta,
        alpha: axis_sum / (2.0 * theta),
        sigma2: if degenerate {
            0.0
        } else {
            4.0 * kernel.total_sum()
        },
        degenerate,
    })
}

fn overlap(n: usize, lag: i64) -> f64 {
    (n as i64 - lag.abs()).max(0) as f64
}

/// `Var(1'W1) = 4 sum (n-|u|)(n-|v|) R(u,v)`.
pub fn exact_var_quad(kernel: &Kernel, n: usize) -> f64 {
    4.0 * kernel
        .iter()
        .map(|(&(u, v), &r)| overlap(n, u) * overlap(n, v) * r)
        .sum::<f64>()
}

/// `#{(i,j,k) in [n]^3 : i - j = u, j - k = v}`.
pub fn triple_count(n: usize, u: i64, v: i64) -> i64 {
    let n = n as i64;
    let hi = n.min(n - u).min(n + v);
    let lo = 1.max(1 - u).max(1 + v);
    (hi - lo + 1).max(0)
}

/// `E(1'W^2 1) = n sum_u (n-|u|)(R(u,0) + R(0,u)) + 2 sum_{u,v} T_n(u,v) R(u,v)`.
pub fn exact_mean_w2(kernel: &Kernel, n: usize) -> f64 {
    let mut axis = 0.0;
    let mut chain = 0.0;
    for (&(u, v), &r) in kernel.iter() {
        if v == 0 {
            axis += overlap(n, u) * r;
        }
        if u == 0 {
            axis += overlap(n, v) * r;
        }
        chain += triple_count(n, u, v) as f64 * r;
    }
    n as f64 * axis + 2.0 * chain
}

pub fn finite_n_oracles(kernel: &Kernel, n: usize) -> FiniteNOracles {
    FiniteNOracles {
        n,
        var_quad: exact_var_quad(kernel, n),
        mean_w2: exact_mean_w2(kernel, n),
    }
}

/// Lag autocorrelation `sum_i x_i x_{i+u}` with `x` zero outside its range.
fn autocorrelation(x: &[f64], lag: i64) -> f64 {
    let shift = lag.unsigned_abs() as usize;
    if shift >= x.len() {
        return 0.0;
    }
    x[..x.len() - shift]
        .iter()
        .zip(&x[shift..])
        .map(|(a, b)| a * b)
        .sum()
}

/// Exact `Var(x'Wx) = 4 sum_{u,v} R(u,v) c_x(u) c_x(v)`, `c_x` the lag
/// autocorrelation of `x`.
pub fn exact_var_quadform(kernel: &Kernel, x: &[f64]) -> f64 {
    4.0 * kernel
        .iter()
        .map(|(&(u, v), &r)| r * autocorrelation(x, u) * autocorrelation(x, v))
        .sum::<f64>()
}

fn lag_fraction(lag: i64, n: usize) -> f64 {
    (lag.unsigned_abs() as f64 / n as f64).min(1.0)
}

/// `4 sum (|u|/n ^ 1)(|v|/n ^ 1)|R(u,v)|`, the product-form bound on
/// `|Var(1'W1)/n^2 - sigma2|`.
///
/// Only valid when every lag with `R != 0` has both coordinates nonzero or is
/// the origin: a lag on an axis contributes to the deviation but not to this
/// sum. [`var_quad_deviation_bound`] holds for every kernel.
pub fn var_quad_error_bound(kernel: &Kernel, n: usize) -> f64 {
    4.0 * kernel
        .iter()
        .map(|(&(u, v), &r)| lag_fraction(u, n) * lag_fraction(v, n) * r.abs())
        .sum::<f64>()
}

/// `4 sum (a + b - ab)|R(u,v)|` with `a = |u|/n ^ 1`, `b = |v|/n ^ 1`.
///
/// `Var(1'W1)/n^2 - sigma2 = -4 sum (a + b - ab) R(u,v)` exactly, so this bounds
/// the deviation for any kernel.
pub fn var_quad_deviation_bound(kernel: &Kernel, n: usize) -> f64 {
    4.0 * kernel
        .iter()
        .map(|(&(u, v), &r)| {
            let (a, b) = (lag_fraction(u, n), lag_fraction(v, n));
            (a + b - a * b) * r.abs()
        })
        .sum::<f64>()
}

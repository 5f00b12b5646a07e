use thiserror::Error;

use super::tridiag::Tridiagonal;
use super::SymMatrix;

/// Solver knobs for the extremal eigenvalue routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigOptions {
    /// Relative residual target: `|Mv - lambda v| <= tol * |M|_est`.
    pub tol: f64,
    /// Cap on matrix-vector products; `None` means `10 n`.
    pub max_iter: Option<usize>,
    /// Krylov basis size after which the iteration restarts from the current Ritz vector.
    pub restart: usize,
    /// Largest `n` for which a non-converged Lanczos run falls back to the dense solver.
    pub dense_cap: usize,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            restart: 200,
            dense_cap: 256,
        }
    }
}

impl EigOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn iteration_cap(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(10 * n).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    pub lambda: f64,
    /// Unit eigenvector, first nonzero coordinate positive.
    pub vector: Vec<f64>,
    /// `|Mv - lambda v|`, recomputed from the returned pair.
    pub residual: f64,
    /// Matrix-vector products spent.
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigError {
    #[error("lanczos did not converge after {iterations} iterations (best residual {residual:e})")]
    NotConverged {
        iterations: usize,
        lambda: f64,
        residual: f64,
        vector: Vec<f64>,
    },
    #[error("matrix is empty")]
    Empty,
    #[error("start vector has length {got}, expected {expected}")]
    BadStart { got: usize, expected: usize },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

pub(crate) fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Algebraically largest eigenpair of `sign * M` (so `sign = -1` yields
/// `-lambda_min(M)`), by Lanczos with full reorthogonalization and explicit
/// restarts from the best Ritz vector.
pub fn lanczos_extremal(
    m: &SymMatrix,
    sign: f64,
    opts: &EigOptions,
    start: &[f64],
) -> Result<EigResult, EigError> {
    let n = m.n();
    if n == 0 {
        return Err(EigError::Empty);
    }
    if start.len() != n {
        return Err(EigError::BadStart {
            got: start.len(),
            expected: n,
        });
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        m.matvec(x, out);
        if sign != 1.0 {
            out.iter_mut().for_each(|o| *o *= sign);
        }
    };

    let cap = opts.iteration_cap(n);
    let basis_cap = opts.restart.max(2).min(n);
    let mut iterations = 0usize;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;

    let mut q0 = start.to_vec();
    let s = norm(&q0);
    if s > 0.0 && s.is_finite() {
        q0.iter_mut().for_each(|x| *x /= s);
    } else {
        q0 = vec![1.0 / (n as f64).sqrt(); n];
    }

    let mut w = vec![0.0; n];
    loop {
        let mut basis: Vec<Vec<f64>> = vec![q0.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        loop {
            let j = basis.len() - 1;
            apply(&basis[j], &mut w);
            iterations += 1;
            let alpha = dot(&basis[j], &w);
            axpy(-alpha, &basis[j], &mut w);
            if j > 0 {
                axpy(-betas[j - 1], &basis[j - 1], &mut w);
            }
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    axpy(-c, q, &mut w);
                }
            }
            alphas.push(alpha);
            let beta = norm(&w);

            let t = Tridiagonal {
                diag: &alphas,
                off: &betas,
            };
            let theta = t.largest_eigenvalue();
            let m_est = theta.abs().max(t.smallest_eigenvalue().abs());
            let y = t.eigenvector(theta);
            let estimate = beta * y[j].abs();
            let breakdown = beta <= f64::EPSILON * m_est.max(f64::MIN_POSITIVE) * (n as f64).sqrt();
            let full = basis.len() == basis_cap;

            if estimate <= opts.tol * m_est || breakdown || full || iterations >= cap {
                let mut x = vec![0.0; n];
                for (yi, q) in y.iter().zip(&basis) {
                    axpy(*yi, q, &mut x);
                }
                let s = norm(&x);
                x.iter_mut().for_each(|v| *v /= s);
                apply(&x, &mut w);
                axpy(-theta, &x, &mut w);
                let residual = norm(&w);
                if residual <= opts.tol * m_est || (m_est == 0.0 && residual == 0.0) {
                    fix_sign(&mut x);
                    return Ok(EigResult {
                        lambda: sign * theta,
                        vector: x,
                        residual,
                        iterations,
                    });
                }
                let better = best.as_ref().is_none_or(|b| residual < b.2);
                if better {
                    best = Some((theta, x.clone(), residual));
                }
                if iterations >= cap {
                    let (lambda, mut vector, residual) = best.expect("at least one Ritz pair");
                    fix_sign(&mut vector);
                    return Err(EigError::NotConverged {
                        iterations,
                        lambda: sign * lambda,
                        residual,
                        vector,
                    });
                }
                q0 = x;
                break;
            }
            w.iter_mut().for_each(|v| *v /= beta);
            basis.push(w.clone());
            betas.push(beta);
        }
    }
}

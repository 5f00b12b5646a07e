//! Dense symmetric matrices built from a field sample, the two quadratic
//! forms against the all-ones vector, and extremal eigenvalues.

mod dense;
mod lanczos;
mod tridiag;

pub use dense::{dense_extremal, dense_operator_norm};
pub use lanczos::{lanczos_extremal, EigError, EigOptions, EigResult};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::sampler::FieldSample;

/// Dense symmetric `n x n` matrix, row-major, symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds from `f(i, j)` evaluated on the upper triangle and mirrored.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let x = f(i, j);
                data[i * n + j] = x;
                data[j * n + i] = x;
            }
        }
        Self { n, data }
    }

    /// Row-major constructor; `None` unless the input is exactly symmetric.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Option<Self> {
        if data.len() != n * n {
            return None;
        }
        for i in 0..n {
            for j in 0..i {
                if data[i * n + j] != data[j * n + i] {
                    return None;
                }
            }
        }
        Some(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_upper(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// `out = M x`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.n)) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Row sums, i.e. `M 1`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.n.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `A(i,j) = Z(i,j) + Z(j,i)`.
pub fn build_a(sample: &FieldSample) -> SymMatrix {
    SymMatrix::from_upper(sample.n(), |i, j| sample.get(i, j) + sample.get(j, i))
}

/// `W(i,j) = X(i,j) + X(j,i) = A(i,j) - 2 theta`.
pub fn build_w(sample: &FieldSample) -> SymMatrix {
    SymMatrix::from_upper(sample.n(), |i, j| {
        sample.centered(i, j) + sample.centered(j, i)
    })
}

/// `1' M 1`.
pub fn quad_ones(m: &SymMatrix) -> f64 {
    m.as_slice().iter().sum()
}

/// `1' M^2 1 = |M 1|^2`.
pub fn quad_ones_sq(m: &SymMatrix) -> f64 {
    m.row_sums().iter().map(|r| r * r).sum()
}

/// Gaussian start vector for the Lanczos iteration, normalized.
pub fn random_unit_vector<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// Largest eigenvalue by Lanczos, falling back to the dense solver for
/// `n <= opts.dense_cap` when Lanczos does not converge.
pub fn largest_eigenvalue(
    m: &SymMatrix,
    opts: &EigOptions,
    start: &[f64],
) -> Result<EigResult, EigError> {
    match lanczos_extremal(m, 1.0, opts, start) {
        Ok(r) => Ok(r),
        Err(EigError::NotConverged { iterations, .. }) if m.n() <= opts.dense_cap => {
            let mut r = dense_extremal(m, 1.0);
            r.iterations = iterations;
            Ok(r)
        }
        Err(e) => Err(e),
    }
}

/// Operator norm with the iteration count spent on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormResult {
    pub norm: f64,
    pub iterations: usize,
}

/// `|M| = max(lambda_max(M), lambda_max(-M))`, two extremal solves.
pub fn operator_norm(
    m: &SymMatrix,
    opts: &EigOptions,
    start: &[f64],
) -> Result<NormResult, EigError> {
    let solve = |sign: f64| match lanczos_extremal(m, sign, opts, start) {
        Ok(r) => Ok(r),
        Err(EigError::NotConverged { iterations, .. }) if m.n() <= opts.dense_cap => {
            let mut r = dense_extremal(m, sign);
            r.iterations = iterations;
            Ok(r)
        }
        Err(e) => Err(e),
    };
    let top = solve(1.0)?;
    let bottom = solve(-1.0)?;
    Ok(NormResult {
        norm: top.lambda.max(-bottom.lambda),
        iterations: top.iterations + bottom.iterations,
    })
}

use nalgebra::DMatrix;

use super::lanczos::{fix_sign, EigResult};
use super::SymMatrix;

fn to_dense(m: &SymMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.n(), m.n(), m.as_slice())
}

/// Largest eigenpair of `sign * M` from a full dense decomposition.
pub fn dense_extremal(m: &SymMatrix, sign: f64) -> EigResult {
    let n = m.n();
    let eig = to_dense(m).symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (i, sign * l))
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, l)| if l > acc.1 { (i, l) } else { acc },
        );
    let lambda = eig.eigenvalues[idx];
    let mut vector: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
    fix_sign(&mut vector);
    let mut mv = vec![0.0; n];
    m.matvec(&vector, &mut mv);
    let residual = mv
        .iter()
        .zip(&vector)
        .map(|(a, v)| (a - lambda * v).powi(2))
        .sum::<f64>()
        .sqrt();
    EigResult {
        lambda,
        vector,
        residual,
        iterations: 0,
    }
}

/// Largest singular value from the dense SVD.
pub fn dense_operator_norm(m: &SymMatrix) -> f64 {
    to_dense(m).singular_values().max()
}

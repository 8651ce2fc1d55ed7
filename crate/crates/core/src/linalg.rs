//! Dense symmetric helpers on top of `nalgebra`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Ratio of extreme eigenvalue magnitudes of a symmetric matrix.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = m.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    });
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a symmetric positive-definite matrix. Falls back to an
/// eigendecomposition when Cholesky fails.
pub fn sym_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = condition_estimate(m);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularSubblock { condition: cond });
    }
    let mut inv = match m.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let eig = m.clone().symmetric_eigen();
            let d = eig.eigenvalues.map(|v| 1.0 / v);
            &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
        }
    };
    symmetrize(&mut inv);
    Ok(inv)
}

/// Averages `m` with its transpose in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Principal sub-matrix on the given row/column indices.
pub fn principal(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

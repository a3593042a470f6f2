//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    symmetrize(m).symmetric_eigenvalues()
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).amax()
}

/// Largest singular value, through the smaller Gram matrix.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() >= m.ncols() {
        m.tr_mul(m)
    } else {
        m * m.transpose()
    };
    sym_op_norm(&gram).max(0.0).sqrt()
}

/// `f(M)` for symmetric `M` through its eigendecomposition.
fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(f);
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Principal square root of a positive semi-definite matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, |v| v.max(0.0).sqrt())
}

/// `M^{-1/2}` for symmetric positive definite `M`.
pub fn spd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigenvalues(m);
    if eig.min() <= 0.0 {
        return Err(Error::SingularSystem("matrix is not positive definite".into()));
    }
    Ok(sym_apply(m, |v| 1.0 / v.sqrt()))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::SingularSystem(format!("{}x{} system not positive definite", m.nrows(), m.ncols())))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularSystem(format!("{}x{} system not positive definite", m.nrows(), m.ncols())))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Upper estimate of `|X|_op^2` by power iteration on `X'X`, inflated by 5%
/// so that it can serve as a step-size bound; the solver still backtracks.
pub fn spectral_norm_sq_estimate(x: &DMatrix<f64>) -> f64 {
    let p = x.ncols();
    if x.is_empty() {
        return 0.0;
    }
    // deterministic, not orthogonal to any coordinate axis
    let mut v = DVector::from_fn(p, |j, _| 1.0 + 0.01 * ((j * 7919) % 101) as f64);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..60 {
        let w = x.tr_mul(&(x * &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - est).abs() <= 1e-6 * next {
            est = next;
            break;
        }
        est = next;
    }
    1.05 * est
}

/// Extracts the principal submatrix on `idx`.
pub fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Columns of `m` indexed by `idx`.
pub fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_columns(idx)
}

//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Cholesky factorisation that reports which matrix failed.
pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone()).ok_or_else(|| {
        Error::Numeric(format!("{what} ({}x{}) is not symmetric positive definite", a.nrows(), a.ncols()))
    })
}

/// `log|A|` from a Cholesky factor.
pub fn chol_log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
}

/// Inverse and log-determinant of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let c = cholesky(a, what)?;
    let log_det = chol_log_det(&c);
    Ok((c.inverse(), log_det))
}

/// Largest `q` eigenpairs of a symmetric matrix, in decreasing order.
pub fn top_eigen(a: &DMatrix<f64>, q: usize) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(q, order[..q].iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(a.nrows(), q, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Solve `A x = b` in place for a row-major symmetric positive-definite
/// `k x k` matrix `a` (overwritten by its Cholesky factor). Returns `false`
/// if `a` is not numerically positive definite.
pub fn chol_solve_in_place(a: &mut [f64], k: usize, b: &mut [f64]) -> bool {
    for j in 0..k {
        let mut diag = a[j * k + j];
        for p in 0..j {
            diag -= a[j * k + p] * a[j * k + p];
        }
        if !(diag > 0.0) {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * k + j] = ljj;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / ljj;
        }
    }
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= a[i * k + p] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in (i + 1)..k {
            s -= a[p * k + i] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    true
}

/// Replace `a` by `(a + a^T) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
}

use nalgebra::{DMatrix, DVector};

use crate::elbo::Precision;
use crate::error::{Error, Result};
use crate::linalg;

/// `Sigma^-1` and `log|Sigma|` for `Sigma = Lambda Lambda^T + diag(d)`.
///
/// Uses `Sigma^-1 = D^-1 - D^-1 Lambda (I + Lambda^T D^-1 Lambda)^-1 Lambda^T D^-1`
/// and `|Sigma| = |I + Lambda^T D^-1 Lambda| |D|`, so only a `q x q` system
/// is factorised.
pub fn woodbury_inverse(lambda: &DMatrix<f64>, d: &DVector<f64>) -> Result<Precision> {
    let k = d.len();
    let q = lambda.ncols();
    if lambda.nrows() != k {
        return Err(Error::Dimension(format!("Lambda is {}x{q} but D has {k} entries", lambda.nrows())));
    }
    if let Some(index) = d.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::Numeric(format!("D entry {index} is not positive")));
    }
    let d_inv = d.map(|x| 1.0 / x);
    let dl = DMatrix::from_fn(k, q, |r, c| lambda[(r, c)] * d_inv[r]);
    let mut m = lambda.tr_mul(&dl);
    for j in 0..q {
        m[(j, j)] += 1.0;
    }
    let chol = linalg::cholesky(&m, "I + Lambda^T D^-1 Lambda")?;
    let log_det = linalg::chol_log_det(&chol) + d.iter().map(|x| x.ln()).sum::<f64>();
    let solved = chol.solve(&dl.transpose());
    let mut inv = -(&dl * solved);
    for j in 0..k {
        inv[(j, j)] += d_inv[j];
    }
    linalg::symmetrize(&mut inv);
    Ok(Precision { inv, log_det })
}

/// Reference path: factorise the dense `K x K` covariance directly.
pub fn dense_inverse(lambda: &DMatrix<f64>, d: &DVector<f64>) -> Result<Precision> {
    let mut sigma = lambda * lambda.transpose();
    for j in 0..d.len() {
        sigma[(j, j)] += d[j];
    }
    Precision::from_covariance(&sigma)
}

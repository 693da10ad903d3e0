//! Evidence lower bounds for the logistic normal multinomial model.
//!
//! Both bounds replace `E_q[log(sum_k exp(y_k) + 1)]` by the Jensen bound
//! `log(sum_k exp(m_k + v_k^2 / 2) + 1)`, where `v_k` is the standard
//! deviation of `q(y_k)` (so `V = diag(v^2)`). The multinomial coefficient
//! is always included so that bounds from different models share a scale.
//!
//! The public functions taking dense matrices are the reference entry points.
//! The `*_value` / `*_scores` variants take pre-factorised parameters and are
//! what the AECM engine calls in its inner loops.

use nalgebra::{DMatrix, DVector};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::linalg;

/// Per-observation constants: the first `K` counts, the total, and `log C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub w_star: DVector<f64>,
    pub total: f64,
    pub log_coeff: f64,
}

impl Observation {
    pub fn new(w: &[u64]) -> Self {
        let k = w.len() - 1;
        Observation {
            w_star: DVector::from_iterator(k, w[..k].iter().map(|&c| c as f64)),
            total: w.iter().sum::<u64>() as f64,
            log_coeff: multinomial_log_coeff(w),
        }
    }

    pub fn k(&self) -> usize {
        self.w_star.len()
    }
}

/// Gaussian variational factor for `y`: mean `m`, standard deviations `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalSite {
    pub m: DVector<f64>,
    pub v: DVector<f64>,
}

impl VariationalSite {
    pub fn new(m: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Dimension(format!("site mean has length {} but sd has length {}", m.len(), v.len())));
        }
        if let Some(index) = v.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Domain {
                index,
                message: format!("site standard deviation {} is not positive", v[index]),
            });
        }
        if let Some(index) = m.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain { index, message: "site mean is not finite".into() });
        }
        Ok(VariationalSite { m, v })
    }
}

/// Gaussian variational factor for the latent factors `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSite {
    pub m_tilde: DVector<f64>,
    pub v_tilde: DMatrix<f64>,
}

/// A covariance given through its inverse and log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision {
    pub inv: DMatrix<f64>,
    pub log_det: f64,
}

impl Precision {
    /// Factorise a dense covariance.
    pub fn from_covariance(sigma: &DMatrix<f64>) -> Result<Self> {
        let (inv, log_det) = linalg::spd_inverse(sigma, "Sigma")?;
        Ok(Precision { inv, log_det })
    }
}

/// `log((sum w)! / prod w_k!)` over all `K + 1` parts.
pub fn multinomial_log_coeff(w: &[u64]) -> f64 {
    let total: u64 = w.iter().sum();
    ln_factorial(total) - w.iter().map(|&c| ln_factorial(c)).sum::<f64>()
}

/// Returns `log(sum_k exp(m_k + v_k^2/2) + 1)` and writes the tilted
/// probabilities `exp(m_k + v_k^2/2) / (sum + 1)` into `p`.
pub(crate) fn tilted_softmax(m: &[f64], v: &[f64], p: &mut [f64]) -> f64 {
    let mut shift = 0.0f64;
    for ((pk, &mk), &vk) in p.iter_mut().zip(m).zip(v) {
        *pk = mk + 0.5 * vk * vk;
        shift = shift.max(*pk);
    }
    let mut s = (-shift).exp();
    for pk in p.iter_mut() {
        *pk = (*pk - shift).exp();
        s += *pk;
    }
    let inv = 1.0 / s;
    p.iter_mut().for_each(|pk| *pk *= inv);
    shift + s.ln()
}

/// Log normaliser only.
pub(crate) fn tilted_lse(m: &[f64], v: &[f64]) -> f64 {
    let shift = m.iter().zip(v).map(|(&mk, &vk)| mk + 0.5 * vk * vk).fold(0.0f64, f64::max);
    let s: f64 = m.iter().zip(v).map(|(&mk, &vk)| (mk + 0.5 * vk * vk - shift).exp()).sum::<f64>() + (-shift).exp();
    shift + s.ln()
}

fn check_dims(k: usize, site: &VariationalSite, mu: &DVector<f64>) -> Result<()> {
    if site.m.len() != k || site.v.len() != k || mu.len() != k {
        return Err(Error::Dimension(format!(
            "expected K = {k}, got m: {}, v: {}, mu: {}",
            site.m.len(),
            site.v.len(),
            mu.len()
        )));
    }
    Ok(())
}

/// Cycle-1 bound from pre-factorised `Sigma`.
pub fn cycle1_value(obs: &Observation, site: &VariationalSite, mu: &DVector<f64>, prec: &Precision) -> f64 {
    let k = obs.k();
    let m = site.m.as_slice();
    let v = site.v.as_slice();
    let sinv = prec.inv.as_slice();
    let lse = tilted_lse(m, v);
    let mut quad = 0.0;
    let mut trace = 0.0;
    let mut log_v = 0.0;
    for r in 0..k {
        let er = m[r] - mu[r];
        let col = &sinv[r * k..(r + 1) * k];
        let mut s = 0.0;
        for c in 0..k {
            s += col[c] * (m[c] - mu[c]);
        }
        quad += s * er;
        trace += col[r] * v[r] * v[r];
        log_v += v[r].ln();
    }
    obs.log_coeff + obs.w_star.dot(&site.m) - obs.total * lse + log_v + 0.5 * k as f64
        - 0.5 * prec.log_det
        - 0.5 * quad
        - 0.5 * trace
}

/// Cycle-1 scores `(dF/dm, dF/dv)` from pre-factorised `Sigma`.
pub fn cycle1_scores(
    obs: &Observation,
    site: &VariationalSite,
    mu: &DVector<f64>,
    prec: &Precision,
) -> (DVector<f64>, DVector<f64>) {
    let k = obs.k();
    let mut p = vec![0.0; k];
    tilted_softmax(site.m.as_slice(), site.v.as_slice(), &mut p);
    let e = &site.m - mu;
    let se = &prec.inv * &e;
    let dm = DVector::from_fn(k, |j, _| obs.w_star[j] - se[j] - obs.total * p[j]);
    let dv = DVector::from_fn(k, |j, _| {
        let vj = site.v[j];
        1.0 / vj - vj * prec.inv[(j, j)] - obs.total * vj * p[j]
    });
    (dm, dv)
}

/// Cycle-1 evidence lower bound for one observation.
///
/// Fails with [`Error::Numeric`] if `sigma` is not positive definite.
pub fn elbo_cycle1(w: &[u64], site: &VariationalSite, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let obs = Observation::new(w);
    check_dims(obs.k(), site, mu)?;
    let prec = Precision::from_covariance(sigma)?;
    Ok(cycle1_value(&obs, site, mu, &prec))
}

/// Gradients of [`elbo_cycle1`] with respect to `m` and `v`.
pub fn elbo_cycle1_grad(
    w: &[u64],
    site: &VariationalSite,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let obs = Observation::new(w);
    check_dims(obs.k(), site, mu)?;
    let prec = Precision::from_covariance(sigma)?;
    Ok(cycle1_scores(&obs, site, mu, &prec))
}

/// Quantities of a factor-analytic component shared by all observations.
#[derive(Debug, Clone)]
pub struct FactorModel {
    pub lambda: DMatrix<f64>,
    pub d: DVector<f64>,
    pub d_inv: DVector<f64>,
    /// `Lambda^T D^-1 Lambda`
    pub ltdl: DMatrix<f64>,
    pub log_det_d: f64,
}

impl FactorModel {
    pub fn new(lambda: &DMatrix<f64>, d: &DVector<f64>) -> Result<Self> {
        if lambda.nrows() != d.len() {
            return Err(Error::Dimension(format!("Lambda has {} rows but D has {} entries", lambda.nrows(), d.len())));
        }
        if let Some(index) = d.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Numeric(format!("D entry {index} is not positive ({})", d[index])));
        }
        let d_inv = d.map(|x| 1.0 / x);
        let scaled = DMatrix::from_fn(lambda.nrows(), lambda.ncols(), |r, c| lambda[(r, c)] * d_inv[r]);
        let ltdl = lambda.transpose() * scaled;
        Ok(FactorModel { lambda: lambda.clone(), d: d.clone(), d_inv, ltdl, log_det_d: d.iter().map(|x| x.ln()).sum() })
    }

    pub fn q(&self) -> usize {
        self.lambda.ncols()
    }
}

/// Terms of the cycle-2 bound that depend only on `V~`.
#[derive(Debug, Clone, Copy)]
pub struct FactorCovTerms {
    pub log_det: f64,
    pub trace: f64,
    /// `tr(Lambda^T D^-1 Lambda V~)`
    pub trace_ltdl: f64,
}

impl FactorCovTerms {
    pub fn new(v_tilde: &DMatrix<f64>, fm: &FactorModel) -> Result<Self> {
        let c = linalg::cholesky(v_tilde, "V~")?;
        Ok(FactorCovTerms {
            log_det: linalg::chol_log_det(&c),
            trace: v_tilde.trace(),
            trace_ltdl: fm.ltdl.component_mul(v_tilde).sum(),
        })
    }
}

/// Cycle-2 bound from pre-computed component and `V~` terms.
pub fn cycle2_value(
    obs: &Observation,
    site: &VariationalSite,
    m_tilde: &DVector<f64>,
    vt: &FactorCovTerms,
    mu: &DVector<f64>,
    fm: &FactorModel,
) -> f64 {
    let k = obs.k();
    let q = fm.q();
    let m = site.m.as_slice();
    let v = site.v.as_slice();
    let lse = tilted_lse(m, v);
    let mut log_v = 0.0;
    let mut tr_dv = 0.0;
    let mut quad_d = 0.0;
    let mut scaled_e = DVector::zeros(k);
    for j in 0..k {
        let e = m[j] - mu[j];
        log_v += v[j].ln();
        tr_dv += v[j] * v[j] * fm.d_inv[j];
        quad_d += e * e * fm.d_inv[j];
        scaled_e[j] = e * fm.d_inv[j];
    }
    let cross = (fm.lambda.tr_mul(&scaled_e)).dot(m_tilde);
    let quad_u = (&fm.ltdl * m_tilde).dot(m_tilde);
    let inner =
        2.0 * log_v + vt.log_det + (q + k) as f64 - fm.log_det_d - m_tilde.dot(m_tilde) - vt.trace - tr_dv - quad_d
            + 2.0 * cross
            - quad_u
            - vt.trace_ltdl;
    obs.log_coeff + obs.w_star.dot(&site.m) - obs.total * lse + 0.5 * inner
}

/// Cycle-2 evidence lower bound for one observation.
///
/// `d` holds the diagonal of `D`; a nonpositive entry is a numeric error.
pub fn elbo_cycle2(
    w: &[u64],
    site: &VariationalSite,
    fsite: &FactorSite,
    mu: &DVector<f64>,
    lambda: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Result<f64> {
    let obs = Observation::new(w);
    check_dims(obs.k(), site, mu)?;
    let fm = FactorModel::new(lambda, d)?;
    if fsite.m_tilde.len() != fm.q() || fsite.v_tilde.nrows() != fm.q() {
        return Err(Error::Dimension(format!(
            "factor site has dimension {} but Lambda has {} columns",
            fsite.m_tilde.len(),
            fm.q()
        )));
    }
    let vt = FactorCovTerms::new(&fsite.v_tilde, &fm)?;
    Ok(cycle2_value(&obs, site, &fsite.m_tilde, &vt, mu, &fm))
}

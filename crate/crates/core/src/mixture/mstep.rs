use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ComponentParams, ModelConstraint};
use crate::elbo::VariationalSite;
use crate::error::{Error, Result};
use crate::linalg;
use crate::varinf::FactorPosterior;

/// Which scatter matrix drives the loading update.
///
/// `SiteMeans` uses the scatter of the site means alone in `theta`, in the
/// cross term and in the loadings, with site variances entering only the
/// first term of the noise update. It is not an exact maximisation, so the
/// sweep objective can drift down once near a fixed point (see
/// `FitConfig::guard_loadings`).
///
/// `WithSiteVariance` uses `sigma_hat` everywhere: the factor-analysis EM
/// step for the site-level bound, monotone on its own, but it lets spare
/// factors and free noise variances absorb the distortion that diagonal
/// site covariances leave in that bound, so BIC then favours larger `q` and
/// per-coordinate noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadingScatter {
    #[default]
    SiteMeans,
    WithSiteVariance,
}

/// Sufficient statistics of one component for the cycle-2 update.
#[derive(Debug, Clone)]
pub struct MStepStats {
    /// `sum_i z_ig`
    pub n_g: f64,
    /// Weighted scatter of the site means about `mu_g`.
    pub s: DMatrix<f64>,
    /// `s` plus the weighted site variances on the diagonal.
    pub sigma_hat: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    /// `v_tilde + beta s beta^T`
    pub theta: DMatrix<f64>,
    /// `v_tilde + beta sigma_hat beta^T`
    pub theta_hat: DMatrix<f64>,
    /// `(I + Lambda^T D^-1 Lambda)^-1`
    pub v_tilde: DMatrix<f64>,
}

/// Statistics for component `h` with the current (old) `Lambda` and `D`.
///
/// `sites` is row-major `n x G`; sums run in observation order so the result
/// does not depend on how the sites were computed.
pub fn mstep_stats(
    resp: &DMatrix<f64>,
    sites: &[VariationalSite],
    h: usize,
    params: &ComponentParams,
    n_min: f64,
) -> Result<MStepStats> {
    let (n, g) = resp.shape();
    let k = params.k();
    let n_g: f64 = resp.column(h).iter().sum();
    if n_g < n_min {
        return Err(Error::DegenerateComponent { component: h, mass: n_g, threshold: n_min });
    }
    let mut s = DMatrix::zeros(k, k);
    let mut var = DVector::<f64>::zeros(k);
    let mut e = DVector::zeros(k);
    for i in 0..n {
        let z = resp[(i, h)];
        if z == 0.0 {
            continue;
        }
        let site = &sites[i * g + h];
        e.copy_from(&site.m);
        e -= &params.mu;
        s.ger(z, &e, &e, 1.0);
        for j in 0..k {
            var[j] += z * site.v[j] * site.v[j];
        }
    }
    s /= n_g;
    linalg::symmetrize(&mut s);
    let mut sigma_hat = s.clone();
    for j in 0..k {
        sigma_hat[(j, j)] += var[j] / n_g;
    }
    let post = FactorPosterior::new(&params.lambda, &params.d)?;
    let mut theta = &post.v_tilde + &post.beta * &s * post.beta.transpose();
    linalg::symmetrize(&mut theta);
    let mut theta_hat = &post.v_tilde + &post.beta * &sigma_hat * post.beta.transpose();
    linalg::symmetrize(&mut theta_hat);
    Ok(MStepStats { n_g, s, sigma_hat, beta: post.beta, theta, theta_hat, v_tilde: post.v_tilde })
}

impl MStepStats {
    fn parts(&self, scatter: LoadingScatter) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match scatter {
            LoadingScatter::SiteMeans => (&self.s, &self.theta),
            LoadingScatter::WithSiteVariance => (&self.sigma_hat, &self.theta_hat),
        }
    }
}

/// `diag(Sigma_hat - 2 Lambda beta C + Lambda theta Lambda^T)` with `C` and
/// `theta` chosen by `scatter`.
fn residual_diag(st: &MStepStats, lambda: &DMatrix<f64>, scatter: LoadingScatter) -> DVector<f64> {
    let (c, theta) = st.parts(scatter);
    let lbs = lambda * (&st.beta * c);
    let lt = lambda * theta;
    DVector::from_fn(lambda.nrows(), |j, _| st.sigma_hat[(j, j)] - 2.0 * lbs[(j, j)] + lt.row(j).dot(&lambda.row(j)))
}

/// New `(Lambda_g, D_g)` for every component under `model`.
///
/// `D` is computed from the old loadings. With shared loadings the new `D`
/// is then used to solve for `Lambda` row by row. Entries of `D` are floored
/// at `d_floor`.
pub fn update_lambda_d(
    stats: &[MStepStats],
    model: ModelConstraint,
    old: &[ComponentParams],
    d_floor: f64,
    scatter: LoadingScatter,
) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
    let g = stats.len();
    if old.len() != g || g == 0 {
        return Err(Error::Dimension(format!("{g} stats for {} components", old.len())));
    }
    let k = old[0].k();
    let n: f64 = stats.iter().map(|s| s.n_g).sum();

    let resid: Vec<DVector<f64>> = stats.iter().zip(old).map(|(st, p)| residual_diag(st, &p.lambda, scatter)).collect();
    let mut ds: Vec<DVector<f64>> = match (model.d_shared, model.d_isotropic) {
        (false, false) => resid,
        (false, true) => resid.iter().map(|r| DVector::from_element(k, r.mean())).collect(),
        (true, false) => {
            let mut d = DVector::zeros(k);
            for (r, st) in resid.iter().zip(stats) {
                d.axpy(st.n_g / n, r, 1.0);
            }
            vec![d; g]
        }
        (true, true) => {
            let t: f64 = resid.iter().zip(stats).map(|(r, st)| st.n_g * r.sum()).sum();
            vec![DVector::from_element(k, t / (k as f64 * n)); g]
        }
    };
    for d in &mut ds {
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("noise variance update is not finite".into()));
        }
        d.apply(|x| *x = x.max(d_floor));
    }

    let lambdas: Vec<DMatrix<f64>> = if model.lambda_shared {
        let shared = shared_loadings(stats, &ds, scatter)?;
        vec![shared; g]
    } else {
        stats
            .iter()
            .map(|st| {
                let (c, theta) = st.parts(scatter);
                let (theta_inv, _) = linalg::spd_inverse(theta, "theta")?;
                Ok(c * st.beta.transpose() * theta_inv)
            })
            .collect::<Result<_>>()?
    };
    Ok(lambdas.into_iter().zip(ds).collect())
}

/// Row-wise solve `lambda_j = r_j (sum_g n_g / d_gj theta_g)^-1`.
fn shared_loadings(stats: &[MStepStats], ds: &[DVector<f64>], scatter: LoadingScatter) -> Result<DMatrix<f64>> {
    let k = ds[0].len();
    let q = stats[0].theta.nrows();
    let sbt: Vec<DMatrix<f64>> = stats.iter().map(|st| st.parts(scatter).0 * st.beta.transpose()).collect();
    let mut lambda = DMatrix::zeros(k, q);
    for j in 0..k {
        let mut a = DMatrix::zeros(q, q);
        let mut r = DVector::zeros(q);
        for ((st, d), sb) in stats.iter().zip(ds).zip(&sbt) {
            let w = st.n_g / d[j];
            a += st.parts(scatter).1 * w;
            r.axpy(w, &sb.row(j).transpose(), 1.0);
        }
        let chol = linalg::cholesky(&a, "pooled theta")?;
        lambda.set_row(j, &chol.solve(&r).transpose());
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, Vec<VariationalSite>, ComponentParams) {
        let resp = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let sites = [[0.0, 1.0], [1.0, -1.0], [2.0, 0.5]]
            .iter()
            .map(|m| VariationalSite::new(DVector::from_row_slice(m), DVector::from_element(2, 0.5)).unwrap())
            .collect();
        let params = ComponentParams {
            mu: DVector::from_vec(vec![1.0, 0.0]),
            lambda: DMatrix::zeros(2, 1),
            d: DVector::from_element(2, 1.0),
        };
        (resp, sites, params)
    }

    #[test]
    fn zero_loadings_give_identity_theta() {
        let (resp, sites, params) = toy();
        let st = mstep_stats(&resp, &sites, 0, &params, 1.0).unwrap();
        assert_eq!(st.beta, DMatrix::zeros(1, 2));
        assert_eq!(st.theta, DMatrix::identity(1, 1));
        assert!((st.sigma_hat[(0, 0)] - st.s[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((st.s[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_group_models_coincide() {
        let (resp, sites, mut params) = toy();
        params.lambda = DMatrix::from_column_slice(2, 1, &[0.3, -0.2]);
        let st = vec![mstep_stats(&resp, &sites, 0, &params, 1.0).unwrap()];
        let old = vec![params];
        for (u, c) in [
            (ModelConstraint::UUU, ModelConstraint::CUU),
            (ModelConstraint::UUC, ModelConstraint::CUC),
            (ModelConstraint::UCU, ModelConstraint::CCU),
            (ModelConstraint::UCC, ModelConstraint::CCC),
            (ModelConstraint::UUU, ModelConstraint::UCU),
            (ModelConstraint::UUC, ModelConstraint::UCC),
        ] {
            for sc in [LoadingScatter::SiteMeans, LoadingScatter::WithSiteVariance] {
                let a = update_lambda_d(&st, u, &old, 1e-10, sc).unwrap();
                let b = update_lambda_d(&st, c, &old, 1e-10, sc).unwrap();
                assert!((&a[0].0 - &b[0].0).abs().max() < 1e-12, "{u} vs {c}");
                assert!((&a[0].1 - &b[0].1).abs().max() < 1e-12, "{u} vs {c}");
            }
        }
    }
}

use nalgebra::{DMatrix, DVector};

use super::MixtureState;
use crate::elbo::{cycle1_value, cycle2_value, FactorCovTerms, FactorModel, Observation, VariationalSite};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

use super::woodbury::woodbury_inverse;

/// Which bound the responsibilities are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cycle {
    One,
    Two,
}

/// Row-wise `softmax(log pi_g + f_ig)`.
///
/// Returns the normalised matrix and `sum_i log sum_g pi_g exp(f_ig)`.
pub fn log_softmax_rows(log_pi: &[f64], f: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (n, g) = f.shape();
    let mut resp = DMatrix::zeros(n, g);
    let mut total = 0.0;
    for i in 0..n {
        let mut shift = f64::NEG_INFINITY;
        for h in 0..g {
            shift = shift.max(log_pi[h] + f[(i, h)]);
        }
        if !shift.is_finite() {
            return Err(Error::NoFiniteComponent(i));
        }
        let mut s = 0.0;
        for h in 0..g {
            let e = (log_pi[h] + f[(i, h)] - shift).exp();
            resp[(i, h)] = e;
            s += e;
        }
        for h in 0..g {
            resp[(i, h)] /= s;
        }
        total += shift + s.ln();
    }
    Ok((resp, total))
}

/// `n x G` matrix of cycle-1 bounds at the current sites.
pub(crate) fn cycle1_matrix(obs: &[Observation], state: &MixtureState, exec: Exec) -> Result<DMatrix<f64>> {
    let g = state.g();
    let precs = state.components.iter().map(|c| woodbury_inverse(&c.lambda, &c.d)).collect::<Result<Vec<_>>>()?;
    let vals = par::map_range(exec, obs.len() * g, |idx| {
        let (i, h) = (idx / g, idx % g);
        cycle1_value(&obs[i], &state.sites[idx], &state.components[h].mu, &precs[h])
    });
    Ok(DMatrix::from_row_slice(obs.len(), g, &vals))
}

/// `n x G` matrix of cycle-2 bounds at the current sites and factor sites.
pub(crate) fn cycle2_matrix(obs: &[Observation], state: &MixtureState, exec: Exec) -> Result<DMatrix<f64>> {
    let g = state.g();
    let fms = state.components.iter().map(|c| FactorModel::new(&c.lambda, &c.d)).collect::<Result<Vec<_>>>()?;
    let vts =
        state.factor_covs.iter().zip(&fms).map(|(v, fm)| FactorCovTerms::new(v, fm)).collect::<Result<Vec<_>>>()?;
    let vals = par::map_range(exec, obs.len() * g, |idx| {
        let (i, h) = (idx / g, idx % g);
        cycle2_value(&obs[i], &state.sites[idx], &state.factor_means[idx], &vts[h], &state.components[h].mu, &fms[h])
    });
    Ok(DMatrix::from_row_slice(obs.len(), g, &vals))
}

/// Responsibilities from the requested bound, and the matching
/// `sum_i log sum_g pi_g exp(F_ig)`.
pub fn responsibilities(
    obs: &[Observation],
    state: &MixtureState,
    cycle: Cycle,
    exec: Exec,
) -> Result<(DMatrix<f64>, f64)> {
    let f = match cycle {
        Cycle::One => cycle1_matrix(obs, state, exec)?,
        Cycle::Two => cycle2_matrix(obs, state, exec)?,
    };
    let log_pi: Vec<f64> = state.pi.iter().map(|p| p.ln()).collect();
    log_softmax_rows(&log_pi, &f)
}

/// Column sums of `resp`, failing if any falls below `n_min`.
pub(crate) fn component_mass(resp: &DMatrix<f64>, n_min: f64) -> Result<Vec<f64>> {
    (0..resp.ncols())
        .map(|h| {
            let mass: f64 = resp.column(h).iter().sum();
            if mass < n_min {
                Err(Error::DegenerateComponent { component: h, mass, threshold: n_min })
            } else {
                Ok(mass)
            }
        })
        .collect()
}

/// `pi_g = sum_i z_ig / n` and `mu_g = sum_i z_ig m_ig / sum_i z_ig`.
///
/// `sites` is row-major `n x G`. Sums run in observation order.
pub fn update_pi_mu(
    resp: &DMatrix<f64>,
    sites: &[VariationalSite],
    n_min: f64,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let (n, g) = resp.shape();
    if sites.len() != n * g {
        return Err(Error::Dimension(format!("{} sites for {n} observations and {g} components", sites.len())));
    }
    let mass = component_mass(resp, n_min)?;
    let k = sites.first().map_or(0, |s| s.m.len());
    let mut mus = vec![DVector::zeros(k); g];
    for i in 0..n {
        for h in 0..g {
            mus[h].axpy(resp[(i, h)], &sites[i * g + h].m, 1.0);
        }
    }
    for (mu, m) in mus.iter_mut().zip(&mass) {
        *mu /= *m;
    }
    let pi = mass.iter().map(|m| m / n as f64).collect();
    Ok((pi, mus))
}

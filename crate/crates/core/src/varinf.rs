//! Per-observation variational updates.
//!
//! `update_site` maximises the cycle-1 bound over `(m, v)` with alternating,
//! safeguarded Newton steps (one step in `v`, then one in `m`, per
//! iteration). Every step is backtracked by halving until the bound does not
//! decrease, so the returned site is never worse than the one passed in.
//!
//! Both blocks are strictly concave. In `m` the negative Hessian is
//! `Sigma^-1 + N (diag(p) - p p^T)`. In `v` it is `diag(a) - N u u^T` with
//! `a_k = 1/v_k^2 + (Sigma^-1)_kk + N p_k (1 + v_k^2)` and `u_k = v_k p_k`,
//! which is solved in `O(K)` by Sherman-Morrison.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::elbo::{tilted_lse, tilted_softmax, FactorSite, Observation, Precision, VariationalSite};
use crate::error::{Error, Result};
use crate::linalg;

/// Settings for the inner Newton iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_halvings: usize,
    pub v_floor: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { max_iters: 20, grad_tol: 1e-6, step_halvings: 30, v_floor: 1e-4 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 || !(self.grad_tol > 0.0) || !(self.v_floor > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid Newton settings {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of [`refine_site`].
#[derive(Debug, Clone, PartialEq)]
pub struct SiteUpdate {
    pub site: VariationalSite,
    /// Newton iterations taken (each is one `v` step and one `m` step).
    pub iterations: usize,
    pub converged: bool,
    /// Projected score max-norm at the returned site.
    pub grad_norm: f64,
}

struct Workspace {
    p: Vec<f64>,
    gm: Vec<f64>,
    gv: Vec<f64>,
    step: Vec<f64>,
    trial: Vec<f64>,
    e: Vec<f64>,
    hess: Vec<f64>,
}

impl Workspace {
    fn new(k: usize) -> Self {
        Workspace {
            p: vec![0.0; k],
            gm: vec![0.0; k],
            gv: vec![0.0; k],
            step: vec![0.0; k],
            trial: vec![0.0; k],
            e: vec![0.0; k],
            hess: vec![0.0; k * k],
        }
    }
}

/// The part of the cycle-1 bound that depends on `(m, v)`.
fn objective(obs: &Observation, m: &[f64], v: &[f64], mu: &[f64], sinv: &[f64], e: &mut [f64]) -> f64 {
    let k = m.len();
    let mut lin = 0.0;
    let mut log_v = 0.0;
    let mut trace = 0.0;
    for j in 0..k {
        e[j] = m[j] - mu[j];
        lin += obs.w_star[j] * m[j];
        log_v += v[j].ln();
        trace += sinv[j * k + j] * v[j] * v[j];
    }
    let mut quad = 0.0;
    for r in 0..k {
        let row = &sinv[r * k..(r + 1) * k];
        let mut s = 0.0;
        for c in 0..k {
            s += row[c] * e[c];
        }
        quad += s * e[r];
    }
    lin - obs.total * tilted_lse(m, v) + log_v - 0.5 * quad - 0.5 * trace
}

/// Fill the tilted probabilities and both scores; returns the projected
/// max-norm (a `v` pinned at the floor with a negative score counts as 0).
fn scores(obs: &Observation, m: &[f64], v: &[f64], mu: &[f64], sinv: &[f64], floor: f64, ws: &mut Workspace) -> f64 {
    let k = m.len();
    tilted_softmax(m, v, &mut ws.p);
    let mut norm = 0.0f64;
    for r in 0..k {
        let row = &sinv[r * k..(r + 1) * k];
        let mut s = 0.0;
        for c in 0..k {
            s += row[c] * (m[c] - mu[c]);
        }
        ws.gm[r] = obs.w_star[r] - s - obs.total * ws.p[r];
        ws.gv[r] = 1.0 / v[r] - v[r] * row[r] - obs.total * v[r] * ws.p[r];
        let gv_proj = if v[r] <= floor && ws.gv[r] < 0.0 { 0.0 } else { ws.gv[r] };
        norm = norm.max(ws.gm[r].abs()).max(gv_proj.abs());
    }
    norm
}

thread_local! {
    static WORKSPACE: RefCell<Workspace> = RefCell::new(Workspace::new(0));
}

/// Gains below this are lost in the rounding of an objective of size `f`.
fn noise_level(f: f64) -> f64 {
    1e-14 * (1.0 + f.abs())
}

/// Maximise the cycle-1 bound for one observation/component pair, starting
/// from `start`. The bound never drops by more than rounding; once the
/// remaining gain is below that, steps are judged by the score norm.
pub fn refine_site(
    obs: &Observation,
    start: &VariationalSite,
    mu: &DVector<f64>,
    prec: &Precision,
    cfg: &NewtonConfig,
) -> SiteUpdate {
    let mut site = start.clone();
    let (iterations, converged, grad_norm) = refine_site_in_place(obs, &mut site, mu, prec, cfg);
    SiteUpdate { site, iterations, converged, grad_norm }
}

/// [`refine_site`] overwriting `site`; returns `(iterations, converged,
/// grad_norm)`.
///
/// A block step whose predicted gain is below the rounding level of the
/// objective is tried once at full length and dropped if it does not
/// improve; the iteration stops when neither block moves.
pub fn refine_site_in_place(
    obs: &Observation,
    site: &mut VariationalSite,
    mu: &DVector<f64>,
    prec: &Precision,
    cfg: &NewtonConfig,
) -> (usize, bool, f64) {
    WORKSPACE.with(|cell| {
        let mut ws = cell.borrow_mut();
        let k = obs.k();
        if ws.p.len() != k {
            *ws = Workspace::new(k);
        }
        site.v.apply(|x| *x = x.max(cfg.v_floor));
        let m = site.m.as_mut_slice();
        let v = site.v.as_mut_slice();
        newton(obs, m, v, mu.as_slice(), prec.inv.as_slice(), cfg, &mut ws)
    })
}

fn newton(
    obs: &Observation,
    m: &mut [f64],
    v: &mut [f64],
    mu: &[f64],
    sinv: &[f64],
    cfg: &NewtonConfig,
    ws: &mut Workspace,
) -> (usize, bool, f64) {
    let k = m.len();
    let total = obs.total;
    let mut f = objective(obs, m, v, mu, sinv, &mut ws.e);
    let mut iterations = 0;

    loop {
        let grad_norm = scores(obs, m, v, mu, sinv, cfg.v_floor, ws);
        if grad_norm < cfg.grad_tol {
            return (iterations, true, grad_norm);
        }
        if iterations == cfg.max_iters {
            return (iterations, false, grad_norm);
        }
        iterations += 1;
        let mut moved = false;

        // v block: (diag(a) - N u u^T) step = gv
        let mut a_inv_g_dot_u = 0.0;
        let mut a_inv_u_dot_u = 0.0;
        for j in 0..k {
            let vj = v[j];
            let a = 1.0 / (vj * vj) + sinv[j * k + j] + total * ws.p[j] * (1.0 + vj * vj);
            let u = vj * ws.p[j];
            ws.step[j] = ws.gv[j] / a;
            ws.trial[j] = u / a;
            a_inv_g_dot_u += ws.step[j] * u;
            a_inv_u_dot_u += ws.trial[j] * u;
        }
        let denom = 1.0 - total * a_inv_u_dot_u;
        if denom > 0.0 {
            let scale = total * a_inv_g_dot_u / denom;
            for j in 0..k {
                ws.step[j] += ws.trial[j] * scale;
            }
        }
        let gain: f64 = (0..k).map(|j| ws.gv[j] * ws.step[j]).sum();
        let tries = if gain <= noise_level(f) { 0 } else { cfg.step_halvings };
        let mut t = 1.0;
        for _ in 0..=tries {
            for j in 0..k {
                ws.trial[j] = (v[j] + t * ws.step[j]).max(cfg.v_floor);
            }
            let fc = objective(obs, m, &ws.trial, mu, sinv, &mut ws.e);
            // below rounding the bound cannot rank the step, the scores can
            let polish = tries == 0 && fc >= f - noise_level(f) && {
                let tv = ws.trial.clone();
                scores(obs, m, &tv, mu, sinv, cfg.v_floor, ws) < grad_norm
            };
            if fc >= f || polish {
                moved |= fc > f || polish || ws.trial[..] != v[..];
                f = fc;
                v.copy_from_slice(&ws.trial);
                break;
            }
            t *= 0.5;
        }

        // m block: (Sigma^-1 + N diag(p) - N p p^T) step = gm, at the new v
        let grad_norm = scores(obs, m, v, mu, sinv, cfg.v_floor, ws);
        for r in 0..k {
            for c in 0..k {
                ws.hess[r * k + c] = sinv[r * k + c] - total * ws.p[r] * ws.p[c];
            }
            ws.hess[r * k + r] += total * ws.p[r];
        }
        ws.step.copy_from_slice(&ws.gm);
        if !linalg::chol_solve_in_place(&mut ws.hess, k, &mut ws.step) {
            // Fall back to a scaled gradient step; backtracking keeps it safe.
            let scale = 1.0 / (total + sinv.iter().step_by(k + 1).fold(0.0f64, |a, &b| a.max(b)));
            for j in 0..k {
                ws.step[j] = ws.gm[j] * scale;
            }
        }
        let gain: f64 = (0..k).map(|j| ws.gm[j] * ws.step[j]).sum();
        let tries = if gain <= noise_level(f) { 0 } else { cfg.step_halvings };
        let mut t = 1.0;
        for _ in 0..=tries {
            for j in 0..k {
                ws.trial[j] = m[j] + t * ws.step[j];
            }
            let fc = objective(obs, &ws.trial, v, mu, sinv, &mut ws.e);
            let polish = tries == 0 && fc >= f - noise_level(f) && {
                let tm = ws.trial.clone();
                scores(obs, &tm, v, mu, sinv, cfg.v_floor, ws) < grad_norm
            };
            if fc >= f || polish {
                moved |= fc > f || polish || ws.trial[..] != m[..];
                f = fc;
                m.copy_from_slice(&ws.trial);
                break;
            }
            t *= 0.5;
        }

        if !moved {
            let grad_norm = scores(obs, m, v, mu, sinv, cfg.v_floor, ws);
            return (iterations, grad_norm < cfg.grad_tol, grad_norm);
        }
    }
}

/// Dense-input form of [`refine_site`].
pub fn update_site(
    w: &[u64],
    site: &VariationalSite,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    cfg: &NewtonConfig,
) -> Result<SiteUpdate> {
    cfg.validate()?;
    let obs = Observation::new(w);
    if site.m.len() != obs.k() || mu.len() != obs.k() || sigma.nrows() != obs.k() {
        return Err(Error::Dimension(format!("site/mu/Sigma do not match K = {}", obs.k())));
    }
    let prec = Precision::from_covariance(sigma)?;
    Ok(refine_site(&obs, site, mu, &prec, cfg))
}

/// `(I_q + Lambda^T D^-1 Lambda)^-1` and `beta = V~ Lambda^T D^-1` for one
/// component.
#[derive(Debug, Clone)]
pub struct FactorPosterior {
    pub v_tilde: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

impl FactorPosterior {
    /// `d` holds the diagonal of `D`.
    pub fn new(lambda: &DMatrix<f64>, d: &DVector<f64>) -> Result<Self> {
        let q = lambda.ncols();
        let scaled = DMatrix::from_fn(lambda.nrows(), q, |r, c| lambda[(r, c)] / d[r]);
        let mut m = lambda.tr_mul(&scaled);
        for j in 0..q {
            m[(j, j)] += 1.0;
        }
        let (mut v_tilde, _) = linalg::spd_inverse(&m, "I + Lambda^T D^-1 Lambda")?;
        linalg::symmetrize(&mut v_tilde);
        let beta = &v_tilde * scaled.transpose();
        Ok(FactorPosterior { v_tilde, beta })
    }

    /// `m~ = beta (m - mu)`.
    pub fn mean(&self, m: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        &self.beta * (m - mu)
    }
}

/// Closed-form optimum of the cycle-2 bound over `q(u)`.
pub fn update_factor_site(
    site: &VariationalSite,
    mu: &DVector<f64>,
    lambda: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Result<FactorSite> {
    if let Some(index) = d.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::Numeric(format!("D entry {index} is not positive")));
    }
    let post = FactorPosterior::new(lambda, d)?;
    Ok(FactorSite { m_tilde: post.mean(&site.m, mu), v_tilde: post.v_tilde })
}

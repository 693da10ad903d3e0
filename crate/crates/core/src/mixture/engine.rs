use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::estep::{log_softmax_rows, responsibilities, update_pi_mu, Cycle};
use super::init::{initial_partition, state_from_partition, InitSettings, InitSpec};
use super::mstep::{mstep_stats, update_lambda_d, LoadingScatter};
use super::woodbury::{dense_inverse, woodbury_inverse};
use super::{hard_labels, ComponentParams, MixtureState, ModelConstraint};
use crate::compositional::{empirical_alr, CountMatrix};
use crate::elbo::{cycle1_value, Observation};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::selection::{aitken_converged, bic, free_params};
use crate::varinf::{refine_site_in_place, FactorPosterior, NewtonConfig};

/// Settings for one AECM fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Aitken tolerance on the surrogate objective.
    pub eps: f64,
    pub max_sweeps: usize,
    pub newton: NewtonConfig,
    /// Restarts, each from a reseeded initialisation, after a degenerate or
    /// numerically failed attempt.
    pub retries: usize,
    /// Smallest allowed `sum_i z_ig`.
    pub n_min: f64,
    /// Value substituted for zero counts before the empirical ALR transform.
    pub pseudo_count: f64,
    /// Initial variance of every site coordinate.
    pub site_var_init: f64,
    /// Lower bound on noise variances.
    pub d_floor: f64,
    pub kmeans_starts: usize,
    /// Random starts of the Gaussian initialisation, besides its k-means start.
    pub gaussian_starts: usize,
    /// Iteration cap of each Gaussian initialisation run.
    pub gaussian_iters: usize,
    pub scatter: LoadingScatter,
    /// Keep the previous loadings and noise variances for a sweep whose
    /// cycle-2 update would leave the objective below the last sweep's.
    pub guard_loadings: bool,
    pub exec: Exec,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            eps: 1e-2,
            max_sweeps: 500,
            newton: NewtonConfig::default(),
            retries: 3,
            n_min: 1.0,
            pseudo_count: 1e-3,
            site_var_init: 0.1,
            d_floor: 1e-8,
            kmeans_starts: 10,
            gaussian_starts: 2,
            gaussian_iters: 200,
            scatter: LoadingScatter::default(),
            guard_loadings: true,
            exec: Exec::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.newton.validate()?;
        let positive = [
            ("eps", self.eps),
            ("n_min", self.n_min),
            ("pseudo_count", self.pseudo_count),
            ("site_var_init", self.site_var_init),
            ("d_floor", self.d_floor),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
        if self.max_sweeps == 0 || self.gaussian_iters == 0 {
            return Err(Error::InvalidArgument("max_sweeps and gaussian_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of [`fit_aecm`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelConstraint,
    pub g: usize,
    pub q: usize,
    pub k: usize,
    pub n: usize,
    pub pi: Vec<f64>,
    pub components: Vec<ComponentParams>,
    /// Responsibilities under the final parameters, `n x G`.
    pub resp: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Surrogate objective after each sweep.
    pub trace: Vec<f64>,
    pub objective: f64,
    /// Free parameters, the `p` of the BIC.
    pub n_params: usize,
    pub bic: f64,
    pub converged: bool,
    pub sweeps: usize,
    /// Attempts used, including the successful one.
    pub attempts: usize,
    /// Initialisation of the successful attempt.
    pub init: InitSpec,
}

impl FitResult {
    pub fn sigma(&self, h: usize) -> DMatrix<f64> {
        self.components[h].sigma()
    }
}

/// A count table in the form the engine works on.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub obs: Vec<Observation>,
    /// Empirical ALR coordinates after zero replacement, `n x K`.
    pub y: DMatrix<f64>,
}

impl PreparedData {
    pub fn new(w: &CountMatrix, pseudo_count: f64) -> Result<Self> {
        Ok(PreparedData { obs: w.rows().map(Observation::new).collect(), y: empirical_alr(w, pseudo_count)? })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn k(&self) -> usize {
        self.y.ncols()
    }
}

fn check_dims(data: &PreparedData, g: usize, q: usize) -> Result<()> {
    let (n, k) = (data.n(), data.k());
    if q < 1 || q > k {
        return Err(Error::InvalidArgument(format!("q = {q} must lie in 1..={k}")));
    }
    if g < 1 || n <= g {
        return Err(Error::InvalidArgument(format!("G = {g} needs 1 <= G < n = {n}")));
    }
    Ok(())
}

fn retryable(e: &Error) -> bool {
    matches!(e, Error::DegenerateComponent { .. } | Error::Numeric(_) | Error::NoFiniteComponent(_))
}

/// Seed of restart `attempt` derived from the caller's seed.
fn restart_seed(base: u64, attempt: usize) -> u64 {
    base.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Fit one `(G, q, model)` cell.
///
/// On a degenerate component or numeric failure the fit is restarted from a
/// reseeded initialisation, up to `cfg.retries` times.
pub fn fit_aecm(
    w: &CountMatrix,
    g: usize,
    q: usize,
    model: ModelConstraint,
    init: &InitSpec,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let data = PreparedData::new(w, cfg.pseudo_count)?;
    check_dims(&data, g, q)?;
    let labels = initial_partition(&data.y, g, q, model, init, cfg)?;
    fit_partition(&data, &labels, init, g, q, model, cfg)
}

/// [`fit_aecm`] on prepared data from an already computed initial partition
/// (`labels` must be what `init` produces).
pub fn fit_partition(
    data: &PreparedData,
    labels: &[usize],
    init: &InitSpec,
    g: usize,
    q: usize,
    model: ModelConstraint,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    check_dims(data, g, q)?;
    let base = init.seed().unwrap_or(0);
    let mut current = (init.clone(), labels.to_vec());
    let mut last = String::new();
    for attempt in 0..=cfg.retries {
        if attempt > 0 {
            let spec = init.reseeded(restart_seed(base, attempt));
            let l = initial_partition(&data.y, g, q, model, &spec, cfg)?;
            current = (spec, l);
        }
        match run(data, &current.1, g, q, model, cfg) {
            Ok((state, trace, converged)) => {
                return Ok(finish(data, state, trace, converged, model, q, attempt + 1, current.0));
            }
            Err(e) if retryable(&e) => last = e.to_string(),
            Err(e) => return Err(e),
        }
    }
    Err(Error::FitFailed { attempts: cfg.retries + 1, last })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    data: &PreparedData,
    state: MixtureState,
    trace: Vec<f64>,
    converged: bool,
    model: ModelConstraint,
    q: usize,
    attempts: usize,
    init: InitSpec,
) -> FitResult {
    let (n, k, g) = (data.n(), data.k(), state.g());
    let objective = *trace.last().expect("at least one sweep");
    let n_params = free_params(model, g, k, q);
    FitResult {
        model,
        g,
        q,
        k,
        n,
        labels: hard_labels(&state.resp),
        pi: state.pi,
        components: state.components,
        resp: state.resp,
        sweeps: trace.len(),
        objective,
        n_params,
        bic: bic(objective, n_params, n),
        trace,
        converged,
        attempts,
        init,
    }
}

fn run(
    data: &PreparedData,
    labels: &[usize],
    g: usize,
    q: usize,
    model: ModelConstraint,
    cfg: &FitConfig,
) -> Result<(MixtureState, Vec<f64>, bool)> {
    let settings = InitSettings { site_var: cfg.site_var_init, d_floor: cfg.d_floor };
    let mut state = state_from_partition(&data.y, labels, g, q, model, settings)?;
    let mut trace = Vec::new();
    for sweep in 0..cfg.max_sweeps {
        let objective = sweep_once(data, &mut state, model, cfg, trace.last().copied())?;
        if !objective.is_finite() {
            return Err(Error::Numeric(format!("surrogate objective is {objective} at sweep {sweep}")));
        }
        trace.push(objective);
        if cfg!(debug_assertions) && sweep % 10 == 0 {
            check_woodbury(&state.components)?;
        }
        if aitken_converged(&trace, cfg.eps) {
            return Ok((state, trace, true));
        }
    }
    Ok((state, trace, false))
}

/// One AECM sweep; returns the surrogate objective under the new parameters.
///
/// `previous` is the objective after the last sweep, used by the loading
/// guard.
pub(crate) fn sweep_once(
    data: &PreparedData,
    state: &mut MixtureState,
    model: ModelConstraint,
    cfg: &FitConfig,
    previous: Option<f64>,
) -> Result<f64> {
    let g = state.g();
    let obs = &data.obs;

    // Cycle 1: sites, responsibilities, pi and mu.
    let precs = state.components.iter().map(|c| woodbury_inverse(&c.lambda, &c.d)).collect::<Result<Vec<_>>>()?;
    let newton = cfg.newton;
    let components = &state.components;
    par::for_each_mut(cfg.exec, &mut state.sites, |idx, site| {
        let (i, h) = (idx / g, idx % g);
        refine_site_in_place(&obs[i], site, &components[h].mu, &precs[h], &newton);
    });
    let sites = &state.sites;
    let f1 = par::map_range(cfg.exec, sites.len(), |idx| {
        let (i, h) = (idx / g, idx % g);
        cycle1_value(&obs[i], &sites[idx], &components[h].mu, &precs[h])
    });
    let log_pi: Vec<f64> = state.pi.iter().map(|p| p.ln()).collect();
    let (resp, _) = log_softmax_rows(&log_pi, &DMatrix::from_row_slice(obs.len(), g, &f1))?;
    let (pi, mus) = update_pi_mu(&resp, &state.sites, cfg.n_min)?;
    state.pi = pi;
    for (c, mu) in state.components.iter_mut().zip(mus) {
        c.mu = mu;
    }
    state.resp = resp;

    // Cycle 2: factor posteriors under the old Lambda and D, then the update.
    let posts = state.components.iter().map(|c| FactorPosterior::new(&c.lambda, &c.d)).collect::<Result<Vec<_>>>()?;
    let components = &state.components;
    let sites = &state.sites;
    state.factor_means = par::map_range(cfg.exec, sites.len(), |idx| {
        let h = idx % g;
        posts[h].mean(&sites[idx].m, &components[h].mu)
    });
    state.factor_covs = posts.into_iter().map(|p| p.v_tilde).collect();
    let (resp, _) = responsibilities(obs, state, Cycle::Two, cfg.exec)?;
    state.resp = resp;
    let stats = (0..g)
        .map(|h| mstep_stats(&state.resp, &state.sites, h, &state.components[h], cfg.n_min))
        .collect::<Result<Vec<_>>>()?;
    let updated = update_lambda_d(&stats, model, &state.components, cfg.d_floor, cfg.scatter)?;
    let old: Vec<_> = state
        .components
        .iter_mut()
        .zip(updated)
        .map(|(c, (lambda, d))| (std::mem::replace(&mut c.lambda, lambda), std::mem::replace(&mut c.d, d)))
        .collect();

    let (mut resp, mut objective) = responsibilities(obs, state, Cycle::One, cfg.exec)?;
    if cfg.guard_loadings && previous.is_some_and(|p| objective < p) {
        for (c, (lambda, d)) in state.components.iter_mut().zip(old) {
            c.lambda = lambda;
            c.d = d;
        }
        (resp, objective) = responsibilities(obs, state, Cycle::One, cfg.exec)?;
    }
    state.resp = resp;
    Ok(objective)
}

fn check_woodbury(components: &[ComponentParams]) -> Result<()> {
    for c in components {
        let a = woodbury_inverse(&c.lambda, &c.d)?;
        let b = dense_inverse(&c.lambda, &c.d)?;
        let scale = b.inv.abs().max().max(1.0);
        debug_assert!(
            (&a.inv - &b.inv).abs().max() <= 1e-10 * scale
                && (a.log_det - b.log_det).abs() <= 1e-10 * b.log_det.abs().max(1.0),
            "Woodbury and dense inverses disagree"
        );
    }
    Ok(())
}

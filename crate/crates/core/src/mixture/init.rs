//! Starting values: a hard partition of the empirical ALR coordinates, then
//! moment estimates of `(pi, mu, Lambda, D)` within each part.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::FitConfig;
use super::estep::{log_softmax_rows, update_pi_mu};
use super::mstep::{mstep_stats, update_lambda_d, LoadingScatter};
use super::woodbury::woodbury_inverse;
use super::{hard_labels, ComponentParams, MixtureState, ModelConstraint};
use crate::elbo::VariationalSite;
use crate::error::{Error, Result};
use crate::linalg;
use crate::selection::aitken_converged;

/// How the initial partition is produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    /// MAP partition of a Gaussian factor-mixture fit (same `G`, `q` and
    /// constraint) to the empirical ALR values, best of k-means starts on
    /// the raw and sphered values and several random starts.
    Gaussian { seed: u64 },
    /// k-means++ seeded Lloyd iterations, best of several starts.
    KMeans { seed: u64 },
    /// Uniformly random labels (every component non-empty).
    Random { seed: u64 },
    /// A given partition, labels in `0..G`.
    Labels(Vec<usize>),
}

/// Seeded initialisation methods, for callers that supply seeds separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Gaussian,
    KMeans,
    Random,
}

impl InitKind {
    pub fn with_seed(self, seed: u64) -> InitSpec {
        match self {
            InitKind::Gaussian => InitSpec::Gaussian { seed },
            InitKind::KMeans => InitSpec::KMeans { seed },
            InitKind::Random => InitSpec::Random { seed },
        }
    }
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(InitKind::Gaussian),
            "kmeans" | "k-means" => Ok(InitKind::KMeans),
            "random" => Ok(InitKind::Random),
            _ => Err(Error::InvalidArgument(format!("unknown initialisation {s:?} (gaussian, kmeans, random)"))),
        }
    }
}

impl InitSpec {
    /// The same kind of initialisation with another seed; a fixed partition
    /// becomes a Gaussian start.
    pub fn reseeded(&self, seed: u64) -> InitSpec {
        match self {
            InitSpec::KMeans { .. } => InitSpec::KMeans { seed },
            InitSpec::Random { .. } => InitSpec::Random { seed },
            InitSpec::Gaussian { .. } | InitSpec::Labels(_) => InitSpec::Gaussian { seed },
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            InitSpec::Gaussian { seed } | InitSpec::KMeans { seed } | InitSpec::Random { seed } => Some(*seed),
            InitSpec::Labels(_) => None,
        }
    }
}

fn sq_dist(y: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, h: usize) -> f64 {
    (0..y.ncols()).map(|j| (y[(i, j)] - c[(h, j)]).powi(2)).sum()
}

/// Lloyd's algorithm from a k-means++ start; returns labels and the
/// within-cluster sum of squares.
fn lloyd(y: &DMatrix<f64>, g: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let (n, k) = y.shape();
    let mut centres = DMatrix::zeros(g, k);
    let first = rng.random_range(0..n);
    centres.row_mut(0).copy_from(&y.row(first));
    let mut best = vec![f64::INFINITY; n];
    for h in 1..g {
        for i in 0..n {
            best[i] = best[i].min(sq_dist(y, i, &centres, h - 1));
        }
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in best.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centres.row_mut(h).copy_from(&y.row(pick));
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..200 {
        let mut changed = false;
        for i in 0..n {
            let mut arg = 0;
            let mut dist = f64::INFINITY;
            for h in 0..g {
                let d = sq_dist(y, i, &centres, h);
                if d < dist {
                    dist = d;
                    arg = h;
                }
            }
            if labels[i] != arg {
                labels[i] = arg;
                changed = true;
            }
        }
        let mut counts = vec![0usize; g];
        centres.fill(0.0);
        for i in 0..n {
            counts[labels[i]] += 1;
            let mut row = centres.row_mut(labels[i]);
            row += y.row(i);
        }
        for h in 0..g {
            if counts[h] == 0 {
                // Re-seed an empty cluster at the point farthest from its centre.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(y, a, &centres, labels[a]) / counts[labels[a]].max(1) as f64;
                        let db = sq_dist(y, b, &centres, labels[b]) / counts[labels[b]].max(1) as f64;
                        da.total_cmp(&db)
                    })
                    .unwrap_or(0);
                centres.row_mut(h).copy_from(&y.row(far));
                changed = true;
            } else {
                let mut row = centres.row_mut(h);
                row /= counts[h] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let sse = (0..n).map(|i| sq_dist(y, i, &centres, labels[i])).sum();
    (labels, sse)
}

/// Best-of-`starts` k-means partition of the rows of `y` into `g` groups.
pub fn kmeans(y: &DMatrix<f64>, g: usize, seed: u64, starts: usize) -> Vec<usize> {
    if g == 1 {
        return vec![0; y.nrows()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (Vec::new(), f64::INFINITY);
    for _ in 0..starts.max(1) {
        let run = lloyd(y, g, &mut rng);
        if run.1 < best.1 {
            best = run;
        }
    }
    best.0
}

fn random_partition(n: usize, g: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..g)).collect();
        let mut seen = vec![false; g];
        labels.iter().for_each(|&l| seen[l] = true);
        if seen.iter().all(|&s| s) {
            return labels;
        }
    }
}

/// The hard partition an [`InitSpec`] produces for data `y` (`n x K`).
///
/// Only the Gaussian start depends on `q` and `model`.
pub fn initial_partition(
    y: &DMatrix<f64>,
    g: usize,
    q: usize,
    model: ModelConstraint,
    init: &InitSpec,
    cfg: &FitConfig,
) -> Result<Vec<usize>> {
    let n = y.nrows();
    let labels = match init {
        InitSpec::Gaussian { seed } => gaussian_partition(y, g, q, model, *seed, cfg),
        InitSpec::KMeans { seed } => kmeans(y, g, *seed, cfg.kmeans_starts),
        InitSpec::Random { seed } => random_partition(n, g, *seed),
        InitSpec::Labels(l) => {
            if l.len() != n {
                return Err(Error::Dimension(format!("{} initial labels for {n} observations", l.len())));
            }
            if let Some(&bad) = l.iter().find(|&&x| x >= g) {
                return Err(Error::InvalidArgument(format!("initial label {bad} is not below G = {g}")));
            }
            l.clone()
        }
    };
    Ok(labels)
}

/// EM for a Gaussian mixture of factor analyzers on `y` from a hard
/// partition. Returns the final MAP labels and log-likelihood.
fn gaussian_em(
    y: &DMatrix<f64>,
    labels: &[usize],
    g: usize,
    q: usize,
    model: ModelConstraint,
    cfg: &FitConfig,
) -> Result<(Vec<usize>, f64)> {
    let (n, k) = y.shape();
    let (mut pi, mut comps) = params_from_partition(y, labels, g, q, model, cfg.d_floor)?;
    // Point-mass sites let the cycle-2 statistics serve as plain EM statistics.
    let mut sites = Vec::with_capacity(n * g);
    for i in 0..n {
        for _ in 0..g {
            sites.push(VariationalSite { m: y.row(i).transpose(), v: DVector::zeros(k) });
        }
    }
    let log_norm = k as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut trace = Vec::new();
    let mut resp;
    let mut e = DVector::zeros(k);
    loop {
        let precs = comps.iter().map(|c| woodbury_inverse(&c.lambda, &c.d)).collect::<Result<Vec<_>>>()?;
        let dens = DMatrix::from_fn(n, g, |i, h| {
            e.copy_from(&y.row(i).transpose());
            e -= &comps[h].mu;
            -0.5 * (log_norm + precs[h].log_det + e.dot(&(&precs[h].inv * &e)))
        });
        let log_pi: Vec<f64> = pi.iter().map(|p: &f64| p.ln()).collect();
        let (r, ll) = log_softmax_rows(&log_pi, &dens)?;
        resp = r;
        trace.push(ll);
        if trace.len() >= cfg.gaussian_iters || aitken_converged(&trace, cfg.eps) {
            break;
        }
        let (new_pi, mus) = update_pi_mu(&resp, &sites, cfg.n_min)?;
        pi = new_pi;
        for (c, mu) in comps.iter_mut().zip(mus) {
            c.mu = mu;
        }
        let stats = (0..g).map(|h| mstep_stats(&resp, &sites, h, &comps[h], cfg.n_min)).collect::<Result<Vec<_>>>()?;
        let updated = update_lambda_d(&stats, model, &comps, cfg.d_floor, LoadingScatter::WithSiteVariance)?;
        for (c, (lambda, d)) in comps.iter_mut().zip(updated) {
            c.lambda = lambda;
            c.d = d;
        }
    }
    let ll = *trace.last().expect("one E-step");
    Ok((hard_labels(&resp), ll))
}

/// `y` centred and multiplied by the inverse Cholesky factor of its
/// covariance, or `None` if the covariance is singular.
fn sphered(y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = y.nrows() as f64;
    let mean = y.row_mean();
    let mut c = y.clone();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    let cov = c.transpose() * &c / n;
    let l = cov.cholesky()?.l();
    let mut out = DMatrix::zeros(c.nrows(), c.ncols());
    for i in 0..c.nrows() {
        let row = l.solve_lower_triangular(&c.row(i).transpose())?;
        out.set_row(i, &row.transpose());
    }
    Some(out)
}

/// Best Gaussian factor-mixture partition over k-means starts on the raw
/// and the sphered data plus `cfg.gaussian_starts` random starts. Falls
/// back to raw k-means when every start fails.
fn gaussian_partition(
    y: &DMatrix<f64>,
    g: usize,
    q: usize,
    model: ModelConstraint,
    seed: u64,
    cfg: &FitConfig,
) -> Vec<usize> {
    let km = kmeans(y, g, seed, cfg.kmeans_starts);
    if g == 1 {
        return km;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_57A7);
    let mut starts = vec![km.clone()];
    if let Some(w) = sphered(y) {
        starts.push(kmeans(&w, g, seed, cfg.kmeans_starts));
    }
    for _ in 0..cfg.gaussian_starts {
        starts.push(random_partition(y.nrows(), g, rng.random()));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for start in &starts {
        if let Ok((labels, ll)) = gaussian_em(y, start, g, q, model, cfg) {
            if best.as_ref().is_none_or(|b| ll > b.1) {
                best = Some((labels, ll));
            }
        }
    }
    match best {
        Some((labels, _)) if group_sizes(&labels, g).iter().all(|&c| c >= 2) => labels,
        _ => km,
    }
}

fn group_sizes(labels: &[usize], g: usize) -> Vec<usize> {
    let mut counts = vec![0usize; g];
    labels.iter().for_each(|&l| counts[l] += 1);
    counts
}

/// Settings that shape the initial state.
#[derive(Debug, Clone, Copy)]
pub(crate) struct InitSettings {
    pub site_var: f64,
    pub d_floor: f64,
}

/// Moment estimates of `pi` and the component parameters within each part
/// of a hard partition.
fn params_from_partition(
    y: &DMatrix<f64>,
    labels: &[usize],
    g: usize,
    q: usize,
    model: ModelConstraint,
    d_floor: f64,
) -> Result<(Vec<f64>, Vec<ComponentParams>)> {
    let (n, k) = y.shape();
    let counts = group_sizes(labels, g);
    if let Some(h) = counts.iter().position(|&c| c < 2) {
        return Err(Error::DegenerateComponent { component: h, mass: counts[h] as f64, threshold: 2.0 });
    }

    let mut mus = vec![DVector::zeros(k); g];
    for i in 0..n {
        mus[labels[i]] += y.row(i).transpose();
    }
    for h in 0..g {
        mus[h] /= counts[h] as f64;
    }
    let mut covs = vec![DMatrix::zeros(k, k); g];
    for i in 0..n {
        let e = y.row(i).transpose() - &mus[labels[i]];
        covs[labels[i]].ger(1.0, &e, &e, 1.0);
    }
    for h in 0..g {
        covs[h] /= counts[h] as f64;
    }

    let loadings = |s: &DMatrix<f64>| {
        let (vals, vecs) = linalg::top_eigen(s, q);
        DMatrix::from_fn(k, q, |r, c| vecs[(r, c)] * vals[c].max(0.0).sqrt())
    };
    let lambdas: Vec<DMatrix<f64>> = if model.lambda_shared {
        let mut pooled = DMatrix::zeros(k, k);
        for h in 0..g {
            pooled += &covs[h] * (counts[h] as f64 / n as f64);
        }
        vec![loadings(&pooled); g]
    } else {
        covs.iter().map(loadings).collect()
    };

    let mut ds: Vec<DVector<f64>> = (0..g)
        .map(|h| {
            let ll = &lambdas[h] * lambdas[h].transpose();
            DVector::from_fn(k, |j, _| {
                let s = covs[h][(j, j)];
                (s - ll[(j, j)]).max(1e-3 * s).max(d_floor)
            })
        })
        .collect();
    if model.d_shared {
        let mut d = DVector::zeros(k);
        for h in 0..g {
            d.axpy(counts[h] as f64 / n as f64, &ds[h], 1.0);
        }
        ds = vec![d; g];
    }
    if model.d_isotropic {
        for d in &mut ds {
            let m = d.mean();
            d.fill(m);
        }
    }

    let components: Vec<ComponentParams> =
        (0..g).map(|h| ComponentParams { mu: mus[h].clone(), lambda: lambdas[h].clone(), d: ds[h].clone() }).collect();
    let pi = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok((pi, components))
}

/// Build the starting [`MixtureState`] from a hard partition of `y`.
///
/// Every site starts at the observation's empirical ALR vector with
/// variance `site_var` in each coordinate.
pub(crate) fn state_from_partition(
    y: &DMatrix<f64>,
    labels: &[usize],
    g: usize,
    q: usize,
    model: ModelConstraint,
    settings: InitSettings,
) -> Result<MixtureState> {
    let (n, k) = y.shape();
    let (pi, components) = params_from_partition(y, labels, g, q, model, settings.d_floor)?;
    let sd = DVector::from_element(k, settings.site_var.sqrt());
    let mut sites = Vec::with_capacity(n * g);
    for i in 0..n {
        let m = y.row(i).transpose();
        for _ in 0..g {
            sites.push(VariationalSite::new(m.clone(), sd.clone())?);
        }
    }
    let resp = DMatrix::from_fn(n, g, |i, h| if labels[i] == h { 1.0 } else { 0.0 });
    Ok(MixtureState {
        pi,
        components,
        sites,
        factor_means: vec![DVector::zeros(q); n * g],
        factor_covs: vec![DMatrix::identity(q, q); g],
        resp,
    })
}

/// Starting state for `fit_aecm` on empirical ALR data `y`.
pub fn initialize(
    y: &DMatrix<f64>,
    g: usize,
    q: usize,
    model: ModelConstraint,
    init: &InitSpec,
    cfg: &FitConfig,
) -> Result<MixtureState> {
    let labels = initial_partition(y, g, q, model, init, cfg)?;
    let settings = InitSettings { site_var: cfg.site_var_init, d_floor: cfg.d_floor };
    state_from_partition(y, &labels, g, q, model, settings)
}

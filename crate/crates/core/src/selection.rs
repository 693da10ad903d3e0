//! Convergence detection, parameter counts, BIC and grid search, and the
//! adjusted Rand index.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::compositional::CountMatrix;
use crate::error::{Error, Result};
use crate::mixture::{fit_partition, initial_partition, FitConfig, FitResult, InitKind, ModelConstraint, PreparedData};
use crate::par;

/// Aitken acceleration `a` and asymptotic estimate `l_inf` from three
/// consecutive objective values.
///
/// Returns `None` when the differences vanish or underflow, `a` is not
/// finite, or `a >= 1` (the sequence is not contracting).
pub fn aitken_asymptote(l_prev2: f64, l_prev: f64, l_curr: f64) -> Option<(f64, f64)> {
    let denom = l_prev - l_prev2;
    let num = l_curr - l_prev;
    if !(denom.abs() >= f64::MIN_POSITIVE) {
        return None;
    }
    let a = num / denom;
    if !a.is_finite() || a >= 1.0 {
        return None;
    }
    Some((a, l_prev + num / (1.0 - a)))
}

/// Aitken stopping rule on an objective trace: converged when the last two
/// asymptotic estimates differ by less than `eps`.
///
/// Needs four values for two estimates; with three, only a constant
/// sequence counts as converged. Fewer values never converge.
pub fn aitken_converged(trace: &[f64], eps: f64) -> bool {
    let t = trace.len();
    if t < 3 {
        return false;
    }
    let (l2, l1, l0) = (trace[t - 3], trace[t - 2], trace[t - 1]);
    if l2 == l1 && l1 == l0 {
        return true;
    }
    if t < 4 {
        return false;
    }
    match (aitken_asymptote(trace[t - 4], l2, l1), aitken_asymptote(l2, l1, l0)) {
        (Some((_, prev)), Some((_, curr))) => (curr - prev).abs() < eps,
        _ => false,
    }
}

/// Parameter count of a model as tabulated for the family: loadings, noise
/// variances, `G - 1` mixing weights and `K` for the means.
pub fn count_params(model: ModelConstraint, g: usize, k: usize, q: usize) -> usize {
    let per_lambda = k * q - q * (q - 1) / 2;
    let lambda = if model.lambda_shared { per_lambda } else { g * per_lambda };
    let d = match (model.d_shared, model.d_isotropic) {
        (false, false) => k * g,
        (false, true) => g,
        (true, false) => k,
        (true, true) => 1,
    };
    lambda + d + g - 1 + k
}

/// Free parameters of a fitted model: [`count_params`] with a separate mean
/// vector per component, so every extra group costs its `K` means. This is
/// the `p` used for BIC.
pub fn free_params(model: ModelConstraint, g: usize, k: usize, q: usize) -> usize {
    count_params(model, g, k, q) + (g - 1) * k
}

/// `2 objective - p ln n`; larger is better.
pub fn bic(objective: f64, p: usize, n: usize) -> f64 {
    2.0 * objective - p as f64 * (n as f64).ln()
}

fn pairs(x: u64) -> u128 {
    (x as u128) * (x.saturating_sub(1) as u128) / 2
}

/// Adjusted Rand index of two labelings.
///
/// Returns exactly 1 when the two partitions agree, including the degenerate
/// case where neither has any pair to compare.
pub fn ari<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Eq + std::hash::Hash,
    B: Eq + std::hash::Hash,
{
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("label vectors have lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len() as u64;
    let mut ia = HashMap::new();
    let mut ib = HashMap::new();
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: Vec<u64> = Vec::new();
    let mut cols: Vec<u64> = Vec::new();
    for (x, y) in a.iter().zip(b) {
        let next = ia.len();
        let r = *ia.entry(x).or_insert(next);
        let next = ib.len();
        let c = *ib.entry(y).or_insert(next);
        if r == rows.len() {
            rows.push(0);
        }
        if c == cols.len() {
            cols.push(0);
        }
        rows[r] += 1;
        cols[c] += 1;
        *table.entry((r, c)).or_insert(0) += 1;
    }
    let index: u128 = table.values().map(|&x| pairs(x)).sum();
    let sa: u128 = rows.iter().map(|&x| pairs(x)).sum();
    let sb: u128 = cols.iter().map(|&x| pairs(x)).sum();
    if sa == sb && sa == index {
        return Ok(1.0);
    }
    let total = pairs(n) as f64;
    let expected = sa as f64 * sb as f64 / total;
    let max = 0.5 * (sa as f64 + sb as f64);
    Ok((index as f64 - expected) / (max - expected))
}

/// The model-selection grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub g_values: Vec<usize>,
    pub q_values: Vec<usize>,
    pub models: Vec<ModelConstraint>,
    /// Initialisation seeds; each cell is fitted once per seed.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub init: InitKind,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.g_values.is_empty() || self.q_values.is_empty() || self.models.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument("grid lists must be nonempty".into()));
        }
        if self.q_values.contains(&0) || self.g_values.contains(&0) {
            return Err(Error::InvalidArgument("G and q values must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.g_values.len() * self.q_values.len() * self.models.len()
    }
}

/// One fitted `(G, q, model, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub g: usize,
    pub q: usize,
    pub model: ModelConstraint,
    pub seed: u64,
    pub n_params: usize,
    pub bic: Option<f64>,
    pub objective: Option<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub attempts: usize,
    pub error: Option<String>,
}

impl CellRecord {
    fn from_fit(seed: u64, fit: &FitResult) -> Self {
        CellRecord {
            g: fit.g,
            q: fit.q,
            model: fit.model,
            seed,
            n_params: fit.n_params,
            bic: Some(fit.bic),
            objective: Some(fit.objective),
            converged: fit.converged,
            sweeps: fit.sweeps,
            attempts: fit.attempts,
            error: None,
        }
    }

    fn failed(g: usize, q: usize, model: ModelConstraint, seed: u64, k: usize, e: &Error) -> Self {
        CellRecord {
            g,
            q,
            model,
            seed,
            n_params: free_params(model, g, k, q.min(k)),
            bic: None,
            objective: None,
            converged: false,
            sweeps: 0,
            attempts: 0,
            error: Some(e.to_string()),
        }
    }
}

/// Outcome of [`grid_search`].
#[derive(Debug, Clone)]
pub struct SelectionReport {
    pub spec: GridSpec,
    /// Every run, in `(G, q, model, seed)` grid order.
    pub runs: Vec<CellRecord>,
    /// Best seed of every `(G, q, model)` cell that produced a fit.
    pub best: Vec<CellRecord>,
    pub winner: CellRecord,
    pub fit: FitResult,
}

/// Ordering used to pick the winner: higher BIC, then fewer parameters,
/// lower G, lower q, and finally the model's table position.
fn better(a: &CellRecord, b: &CellRecord) -> bool {
    let ba = a.bic.unwrap_or(f64::NEG_INFINITY);
    let bb = b.bic.unwrap_or(f64::NEG_INFINITY);
    if ba != bb {
        return ba > bb;
    }
    let pos = |m: ModelConstraint| ModelConstraint::ALL.iter().position(|&x| x == m);
    (a.n_params, a.g, a.q, pos(a.model)) < (b.n_params, b.g, b.q, pos(b.model))
}

/// Fit every cell of `spec` and select the model with the highest BIC among
/// converged fits (all successful fits if none converged). Each cell keeps
/// its best seed by objective, the lower seed on ties.
///
/// Seeds of one cell that produce the same initial partition share one fit
/// when it succeeded on its first attempt, since the engine is deterministic
/// given the partition.
pub fn grid_search(w: &CountMatrix, spec: &GridSpec, cfg: &FitConfig) -> Result<SelectionReport> {
    spec.validate()?;
    cfg.validate()?;
    let data = PreparedData::new(w, cfg.pseudo_count)?;
    let k = data.k();
    let ns = spec.seeds.len();

    // Jobs in grid order: (G, q, model, seed index).
    let mut jobs: Vec<(usize, usize, ModelConstraint, usize)> = Vec::new();
    for &g in &spec.g_values {
        for &q in &spec.q_values {
            for &m in &spec.models {
                for s in 0..ns {
                    jobs.push((g, q, m, s));
                }
            }
        }
    }
    let parts = par::map_range(cfg.exec, jobs.len(), |j| {
        let (g, q, m, s) = jobs[j];
        if q > k || g >= data.n() {
            return Err(Error::InvalidArgument(format!("cell G={g}, q={q} is outside the data's range")));
        }
        initial_partition(&data.y, g, q, m, &spec.init.with_seed(spec.seeds[s]), cfg)
    });
    // Earlier seed of the same cell with an identical partition.
    let same_as: Vec<Option<usize>> = (0..jobs.len())
        .map(|j| {
            let cell = j - j % ns;
            (cell..j).find(|&o| matches!((&parts[o], &parts[j]), (Ok(a), Ok(b)) if a == b))
        })
        .collect();

    let run_jobs = |idx: &[usize]| -> Vec<Result<FitResult>> {
        par::map_range(cfg.exec, idx.len(), |t| {
            let j = idx[t];
            let (g, q, m, s) = jobs[j];
            match &parts[j] {
                Ok(labels) => fit_partition(&data, labels, &spec.init.with_seed(spec.seeds[s]), g, q, m, cfg),
                Err(e) => Err(Error::InvalidArgument(e.to_string())),
            }
        })
    };
    let first: Vec<usize> = (0..jobs.len()).filter(|&j| same_as[j].is_none()).collect();
    let mut results: Vec<Option<Result<FitResult>>> = (0..jobs.len()).map(|_| None).collect();
    for (j, r) in first.iter().zip(run_jobs(&first)) {
        results[*j] = Some(r);
    }
    // Duplicates reuse a clean first-attempt fit; anything else is refitted.
    let reusable = |j: usize| matches!(&results[j], Some(Ok(f)) if f.attempts == 1);
    let refit: Vec<usize> = (0..jobs.len()).filter(|&j| same_as[j].is_some_and(|o| !reusable(o))).collect();
    for (j, r) in refit.iter().zip(run_jobs(&refit)) {
        results[*j] = Some(r);
    }
    for j in 0..jobs.len() {
        if results[j].is_none() {
            let src = same_as[j].expect("only duplicates are pending");
            let mut fit = results[src].as_ref().and_then(|r| r.as_ref().ok()).expect("reusable fit").clone();
            fit.init = spec.init.with_seed(spec.seeds[jobs[j].3]);
            results[j] = Some(Ok(fit));
        }
    }
    let mut results: Vec<Result<FitResult>> = results.into_iter().map(|r| r.expect("every job ran")).collect();

    // Assemble in grid order.
    let mut runs = Vec::with_capacity(jobs.len());
    let mut best: BTreeMap<(usize, usize, usize), (CellRecord, usize)> = BTreeMap::new();
    let mut failures = Vec::new();
    let pos = |list: &[usize], x: usize| list.iter().position(|&v| v == x).expect("value from the grid");
    for (j, &(g, q, m, s)) in jobs.iter().enumerate() {
        let seed = spec.seeds[s];
        let rec = match &results[j] {
            Ok(fit) => CellRecord::from_fit(seed, fit),
            Err(e) => {
                failures.push(format!("G={g} q={q} {m} seed={seed}: {e}"));
                CellRecord::failed(g, q, m, seed, k, e)
            }
        };
        if let Some(obj) = rec.objective {
            let key =
                (pos(&spec.g_values, g), pos(&spec.q_values, q), spec.models.iter().position(|&x| x == m).unwrap());
            // equal objectives go to the lower seed so list order does not matter
            let beats = |o: &CellRecord| {
                let prev = o.objective.unwrap_or(f64::NEG_INFINITY);
                obj > prev || (obj == prev && seed < o.seed)
            };
            if best.get(&key).is_none_or(|o| beats(&o.0)) {
                best.insert(key, (rec.clone(), j));
            }
        }
        runs.push(rec);
    }
    if best.is_empty() {
        return Err(Error::AllCellsFailed(failures));
    }

    let any_converged = best.values().any(|(r, _)| r.converged);
    let mut winner: Option<&(CellRecord, usize)> = None;
    for entry in best.values() {
        if any_converged && !entry.0.converged {
            continue;
        }
        if winner.is_none_or(|w| better(&entry.0, &w.0)) {
            winner = Some(entry);
        }
    }
    let (rec, j) = winner.expect("at least one fitted cell").clone();
    let fit = std::mem::replace(&mut results[j], Err(Error::Numeric(String::new()))).expect("winner fit succeeded");
    Ok(SelectionReport {
        spec: spec.clone(),
        runs,
        best: best.into_values().map(|(r, _)| r).collect(),
        winner: rec,
        fit,
    })
}

//! Behaviour of whole fits and grid searches.

mod common;

use common::max_drop;
use lnmfa::mixture::InitSpec;
use lnmfa::simulate::{self, builtin_spec};
use lnmfa::{ari, fit_aecm, grid_search, CountMatrix, FitConfig, GridSpec, ModelConstraint};

fn data(name: &str, n: usize, seed: u64) -> (CountMatrix, Vec<usize>) {
    let mut spec = builtin_spec(name).unwrap();
    spec.n = n;
    spec.seed = seed;
    let out = simulate::generate(&spec).unwrap();
    (out.counts, out.true_labels)
}

#[test]
fn single_group_full_rank_converges() {
    let (w, _) = data("study2", 200, 11);
    let fit = fit_aecm(&w, 1, 9, ModelConstraint::UUU, &InitSpec::Gaussian { seed: 1 }, &FitConfig::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.bic.is_finite());
    assert!(fit.labels.iter().all(|&l| l == 0));
    assert_eq!(fit.pi, vec![1.0]);
}

#[test]
fn recovers_study_structures() {
    for (name, model) in [("study1", ModelConstraint::CCC), ("study2", ModelConstraint::UUU)] {
        let (w, truth) = data(name, 1000, 21);
        let fit = fit_aecm(&w, 3, 3, model, &InitSpec::Gaussian { seed: 1 }, &FitConfig::default()).unwrap();
        let index = ari(&fit.labels, &truth).unwrap();
        assert!(index >= 0.95, "{name}: ARI {index}");
        assert!(max_drop(&fit.trace) <= 1e-4, "{name}: {:?}", fit.trace);
    }
}

#[test]
fn objective_never_drops_across_models() {
    let (w, _) = data("study2", 250, 12);
    let cfg = FitConfig { eps: 1e-6, max_sweeps: 150, ..Default::default() };
    for (i, model) in ModelConstraint::ALL.into_iter().enumerate() {
        let fit = fit_aecm(&w, 3, 2, model, &InitSpec::Gaussian { seed: i as u64 }, &cfg).unwrap();
        assert!(max_drop(&fit.trace) <= 1e-4, "{model}: drop {}", max_drop(&fit.trace));
        let pi_sum: f64 = fit.pi.iter().sum();
        assert!((pi_sum - 1.0).abs() < 1e-12);
        for i in 0..fit.n {
            assert!((fit.resp.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn relabelled_start_permutes_the_fit() {
    let (w, truth) = data("study2", 300, 13);
    let cfg = FitConfig::default();
    let start = fit_aecm(&w, 3, 2, ModelConstraint::UUU, &InitSpec::Gaussian { seed: 2 }, &cfg).unwrap().labels;
    let perm = [2, 0, 1];
    let moved: Vec<usize> = start.iter().map(|&l| perm[l]).collect();
    let a = fit_aecm(&w, 3, 2, ModelConstraint::UUU, &InitSpec::Labels(start), &cfg).unwrap();
    let b = fit_aecm(&w, 3, 2, ModelConstraint::UUU, &InitSpec::Labels(moved), &cfg).unwrap();
    assert_eq!(ari(&a.labels, &truth).unwrap(), ari(&b.labels, &truth).unwrap());
    assert!((a.objective - b.objective).abs() < 1e-6 * a.objective.abs());
    for (h, &p) in perm.iter().enumerate() {
        assert!((a.pi[h] - b.pi[p]).abs() < 1e-6);
        assert!((&a.components[h].mu - &b.components[p].mu).amax() < 1e-6);
    }
}

#[test]
fn constrained_models_do_not_beat_the_unconstrained_one() {
    let (w, truth) = data("study1", 300, 14);
    let cfg = FitConfig::default();
    let init = InitSpec::Labels(truth);
    let free = fit_aecm(&w, 3, 2, ModelConstraint::UUU, &init, &cfg).unwrap();
    for model in ModelConstraint::ALL.into_iter().skip(1) {
        let fit = fit_aecm(&w, 3, 2, model, &init, &cfg).unwrap();
        assert!(fit.objective <= free.objective + 1e-3, "{model}: {} > {}", fit.objective, free.objective);
    }
}

#[test]
fn single_cell_grid_picks_that_cell() {
    let (w, _) = data("study1", 120, 15);
    let grid = GridSpec {
        g_values: vec![2],
        q_values: vec![1],
        models: vec![ModelConstraint::CUC],
        seeds: vec![5],
        init: Default::default(),
    };
    let report = grid_search(&w, &grid, &FitConfig::default()).unwrap();
    assert_eq!((report.winner.g, report.winner.q, report.winner.model), (2, 1, ModelConstraint::CUC));
    assert_eq!(report.runs.len(), 1);
    assert_eq!(report.fit.bic, report.winner.bic.unwrap());
}

#[test]
fn grid_winner_ignores_cell_order() {
    let (w, _) = data("study2", 150, 16);
    let cfg = FitConfig::default();
    let forward = GridSpec {
        g_values: vec![1, 2, 3],
        q_values: vec![1, 2],
        models: vec![ModelConstraint::CCC, ModelConstraint::UUU, ModelConstraint::CUU],
        seeds: vec![1, 2],
        init: Default::default(),
    };
    let mut backward = forward.clone();
    backward.g_values.reverse();
    backward.q_values.reverse();
    backward.models.reverse();
    backward.seeds.reverse();
    let a = grid_search(&w, &forward, &cfg).unwrap();
    let b = grid_search(&w, &backward, &cfg).unwrap();
    assert_eq!(a.winner, b.winner);
    assert_eq!(a.fit.labels, b.fit.labels);
}

#[test]
fn sequential_and_parallel_fits_agree() {
    let (w, _) = data("study1", 200, 17);
    let fits: Vec<_> = [lnmfa::Exec::Sequential, lnmfa::Exec::Parallel]
        .into_iter()
        .map(|exec| {
            let cfg = FitConfig { exec, ..Default::default() };
            fit_aecm(&w, 3, 2, ModelConstraint::CCU, &InitSpec::Gaussian { seed: 3 }, &cfg).unwrap()
        })
        .collect();
    assert_eq!(fits[0].trace, fits[1].trace);
    assert_eq!(fits[0].labels, fits[1].labels);
}

#[test]
fn invalid_cells_are_rejected() {
    let (w, _) = data("study1", 20, 18);
    let cfg = FitConfig::default();
    assert!(fit_aecm(&w, 0, 1, ModelConstraint::UUU, &InitSpec::Gaussian { seed: 1 }, &cfg).is_err());
    assert!(fit_aecm(&w, 2, 11, ModelConstraint::UUU, &InitSpec::Gaussian { seed: 1 }, &cfg).is_err());
    assert!(fit_aecm(&w, 20, 1, ModelConstraint::UUU, &InitSpec::Gaussian { seed: 1 }, &cfg).is_err());
}

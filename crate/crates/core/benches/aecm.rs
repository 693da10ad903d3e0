//! Sequential vs parallel execution of a full fit and of a grid search.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lnmfa::simulate::{self, builtin_spec};
use lnmfa::{fit_aecm, grid_search, Exec, FitConfig, GridSpec, InitSpec, ModelConstraint};
use std::hint::black_box;

fn fit(c: &mut Criterion) {
    let mut spec = builtin_spec("study1").unwrap();
    spec.n = 400;
    spec.seed = 7;
    let counts = simulate::generate(&spec).unwrap().counts;
    let mut group = c.benchmark_group("fit CCC G3 q3");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let cfg = FitConfig { exec, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |b, cfg| {
            b.iter(|| {
                fit_aecm(black_box(&counts), 3, 3, ModelConstraint::CCC, &InitSpec::Gaussian { seed: 1 }, cfg).unwrap()
            })
        });
    }
    group.finish();
}

fn grid(c: &mut Criterion) {
    let mut spec = builtin_spec("study2").unwrap();
    spec.n = 200;
    spec.seed = 8;
    let counts = simulate::generate(&spec).unwrap().counts;
    let grid = GridSpec {
        g_values: vec![2, 3],
        q_values: vec![2, 3],
        models: vec![ModelConstraint::UUU, ModelConstraint::CCC],
        seeds: vec![1],
        init: Default::default(),
    };
    let mut group = c.benchmark_group("grid 2x2x2");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let cfg = FitConfig { exec, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |b, cfg| {
            b.iter(|| grid_search(black_box(&counts), &grid, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, fit, grid);
criterion_main!(benches);

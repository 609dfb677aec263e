use std::hint::black_box;

use coexist::analysis::check_2kvar_with;
use coexist::discretization::{energy_total_with, grad_i_into, neumann_laplacian_with};
use coexist::solver::initial_state;
use coexist::{build_domain, make_logistic, DomainSpec, Exec, State};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn kernels(c: &mut Criterion) {
    let models = vec![make_logistic(2.0, 2.0).unwrap(), make_logistic(2.0, 2.0).unwrap()];
    for h in [0.025, 0.0125] {
        let grid = build_domain(&DomainSpec::dumbbell(0.1, h)).unwrap();
        let state = initial_state(&grid, &models).unwrap();
        let cells = grid.len();

        let mut group = c.benchmark_group(format!("dumbbell_{cells}_cells"));
        for (name, exec) in POLICIES {
            group.bench_function(BenchmarkId::new("laplacian", name), |b| {
                b.iter(|| neumann_laplacian_with(exec, &grid, black_box(state.field(0))))
            });
            group.bench_function(BenchmarkId::new("energy", name), |b| {
                b.iter(|| energy_total_with(exec, &grid, &models, black_box(&state), 1e3))
            });
            let mut out = State::zeros(2, cells);
            group.bench_function(BenchmarkId::new("gradient", name), |b| {
                b.iter(|| grad_i_into(exec, &grid, &models, black_box(&state), 1e3, &mut out))
            });
        }
        group.finish();
    }

    let grid = build_domain(&DomainSpec::dumbbell(0.1, 0.025)).unwrap();
    let state = initial_state(&grid, &models).unwrap();
    let mut group = c.benchmark_group("extremality");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| b.iter(|| check_2kvar_with(exec, &grid, &models, black_box(&state), 1e-3)));
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use istc_bench::planted;
use istc_core::prox::Problem;
use istc_core::{
    batch_solve, exact_positive_lasso, make_schedule, solve_fista, solve_ista, solve_istc, SolverConfig, SolverKind,
};
use std::hint::black_box;

fn single_problem(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    for (p, m) in [(32, 8), (128, 64)] {
        let (inst, lambda, top) = planted(p, m, 2, 1);
        let cfg = SolverConfig::new(12).without_trace();
        let schedule = make_schedule(top, lambda, 12).unwrap();
        let size = format!("{p}x{m}");
        group.bench_with_input(BenchmarkId::new("ista", &size), &inst, |b, inst| {
            b.iter(|| solve_ista(&inst.dictionary, black_box(&inst.signal), lambda, &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fista", &size), &inst, |b, inst| {
            b.iter(|| solve_fista(&inst.dictionary, black_box(&inst.signal), lambda, &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("istc", &size), &inst, |b, inst| {
            b.iter(|| solve_istc(&inst.dictionary, black_box(&inst.signal), &schedule).unwrap())
        });
    }
    group.finish();
}

fn exact_oracle(c: &mut Criterion) {
    let (inst, lambda, _) = planted(8, 12, 2, 2);
    c.bench_function("exact_positive_lasso/8x12", |b| {
        b.iter(|| exact_positive_lasso(&inst.dictionary, black_box(&inst.signal), lambda, 12).unwrap())
    });
}

fn batch(c: &mut Criterion) {
    let problems: Vec<Problem> = (0..64)
        .map(|i| {
            let (inst, lambda, _) = planted(64, 32, 3, 100 + i);
            Problem {
                dictionary: inst.dictionary,
                auxiliary: None,
                signal: inst.signal,
                lambda_star: lambda,
            }
        })
        .collect();
    let cfg = SolverConfig::new(50).without_trace();
    c.bench_function("batch_solve/64x(64x32)/istc", |b| {
        b.iter(|| batch_solve(black_box(&problems), SolverKind::Istc, &cfg).unwrap())
    });
}

criterion_group!(benches, single_problem, exact_oracle, batch);
criterion_main!(benches);

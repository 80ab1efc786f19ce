mod common;

use common::{brute_force_coherence, grid_prox, jacobi_eigenvalues};
use istc_core::dictionary::{linf_distance, support_of};
use istc_core::oracle::gaussian_dictionary;
use istc_core::prox::{solve, Problem};
use istc_core::{
    batch_solve, cross_coherence, exact_positive_lasso, generate_planted, kkt_check, lagrangian, make_schedule,
    mutual_coherence, positive_prox, solve_fista, solve_ista, solve_istc, spectral_norm_sq, AuxiliaryMatrix,
    ProblemSpec, Signal, SolverConfig, SolverKind,
};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn coherence_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let d = gaussian_dictionary(&mut rng, 8, 12).unwrap();
        let expected = brute_force_coherence(&d.atoms().to_owned(), &d.atoms().to_owned());
        assert!((mutual_coherence(&d).unwrap() - expected).abs() < 1e-14);

        let d = gaussian_dictionary(&mut rng, 6, 10).unwrap();
        let raw = Array2::from_shape_fn((6, 10), |_| rng.sample::<f64, _>(StandardNormal));
        let w = AuxiliaryMatrix::paired(&raw, &d).unwrap();
        let expected = brute_force_coherence(&w.atoms().to_owned(), &d.atoms().to_owned());
        assert!((cross_coherence(&w, &d).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn spectral_norm_matches_jacobi() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (p, m) in [(8, 12), (20, 5), (3, 3), (16, 16)] {
        let d = gaussian_dictionary(&mut rng, p, m).unwrap();
        let expected = jacobi_eigenvalues(&d.gram())[0];
        let got = spectral_norm_sq(&d).unwrap();
        assert!((got - expected).abs() <= 1e-8 * expected, "{p}x{m}: {got} vs {expected}");
    }
}

proptest! {
    #[test]
    fn prox_matches_grid_search(v in -3.0f64..3.0, lambda in 0.0f64..2.0) {
        let got = positive_prox(Array1::from_elem(1, v).view(), lambda)[0];
        let grid = grid_prox(v, lambda, 200_000);
        let step = (v.abs() + lambda + 1.0) / 200_000.0;
        prop_assert!((got - grid).abs() <= step);
    }

    #[test]
    fn ista_lagrangian_never_increases(seed in 0u64..500) {
        let inst = generate_planted(&ProblemSpec::new(10, 6, 2, seed).noise(0.1).certified(false)).unwrap();
        let lambda = 0.1;
        let (_, trace) = solve_ista(&inst.dictionary, &inst.signal, lambda, &SolverConfig::new(50)).unwrap();
        for pair in trace.lagrangians().windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn istc_iterates_are_nonnegative_and_recorded(seed in 0u64..500, n in 0usize..30) {
        let inst = generate_planted(&ProblemSpec::new(10, 6, 2, seed).noise(0.1).certified(false)).unwrap();
        let top = inst.dictionary.correlate(inst.signal.values()).fold(0.0f64, |a, v| a.max(v.abs()));
        let schedule = make_schedule(top.max(1e-3), 0.05 * top.max(1e-3), n.max(1)).unwrap();
        let (code, trace) = solve_istc(&inst.dictionary, &inst.signal, &schedule).unwrap();
        prop_assert!(code.values().iter().all(|v| *v >= 0.0));
        prop_assert_eq!(trace.len(), n.max(1) + 1);
        for r in &trace.records {
            let l = lagrangian(
                &inst.dictionary,
                &inst.signal,
                &istc_core::SparseCode::new(r.code.clone()).unwrap(),
                schedule.lambda_star(),
            );
            prop_assert!((l - r.lagrangian).abs() <= 1e-12 * l.abs().max(1.0));
            prop_assert_eq!(&r.support, &support_of(r.code.view()));
        }
    }
}

#[test]
fn fista_converges_to_exact_oracle() {
    for seed in 0..5 {
        let inst = generate_planted(&ProblemSpec::new(8, 12, 2, 100 + seed).noise(0.05).certified(false)).unwrap();
        let top = inst.dictionary.correlate(inst.signal.values()).fold(0.0f64, |a, v| a.max(v.abs()));
        let lambda = 0.1 * top;
        let oracle = exact_positive_lasso(&inst.dictionary, &inst.signal, lambda, 12).unwrap();
        assert!(kkt_check(&inst.dictionary, &inst.signal, &oracle, lambda, 1e-9));
        let cfg = SolverConfig::new(100_000).without_trace();
        let (fista, _) = solve_fista(&inst.dictionary, &inst.signal, lambda, &cfg).unwrap();
        assert!(linf_distance(fista.values(), oracle.values()) <= 1e-8, "seed {seed}");
    }
}

#[test]
fn istc_reaches_oracle_on_single_atom_supports() {
    for seed in 0..20 {
        let inst = generate_planted(&ProblemSpec::new(32, 8, 1, 200 + seed).noise(0.05)).unwrap();
        let top = inst.dictionary.correlate(inst.signal.values()).fold(0.0f64, |a, v| a.max(v.abs()));
        let lambda = 0.1 * top;
        let oracle = exact_positive_lasso(&inst.dictionary, &inst.signal, lambda, 8).unwrap();
        let schedule = make_schedule(top, lambda, 200).unwrap();
        let (code, _) = solve_istc(&inst.dictionary, &inst.signal, &schedule).unwrap();
        assert!(linf_distance(code.values(), oracle.values()) <= 1e-9, "seed {seed}");
    }
}

/// With two or more correlated active atoms the homotopy trails the optimum
/// by an amount proportional to the threshold decrement, so the error
/// shrinks as layers are added.
#[test]
fn istc_lag_shrinks_with_layers() {
    let mut errors = [Vec::new(), Vec::new(), Vec::new()];
    for seed in 0..10 {
        let inst = generate_planted(&ProblemSpec::new(64, 12, 2, 300 + seed).noise(0.01)).unwrap();
        let top = inst.dictionary.correlate(inst.signal.values()).fold(0.0f64, |a, v| a.max(v.abs()));
        let lambda = 0.1 * top;
        let oracle = exact_positive_lasso(&inst.dictionary, &inst.signal, lambda, 12).unwrap();
        for (k, n) in [50, 200, 800].into_iter().enumerate() {
            let schedule = make_schedule(top, lambda, n).unwrap();
            let (code, _) = solve_istc(&inst.dictionary, &inst.signal, &schedule).unwrap();
            errors[k].push(linf_distance(code.values(), oracle.values()));
        }
    }
    let total: Vec<f64> = errors.iter().map(|e| e.iter().sum()).collect();
    assert!(total[1] < total[0] && total[2] < total[1], "{total:?}");
    assert!(total[2] < total[0] / 8.0, "{total:?}");
}

#[test]
fn batch_solve_is_deterministic_and_ordered() {
    let problems: Vec<Problem> = (0..50)
        .map(|i| {
            let inst = generate_planted(&ProblemSpec::new(16, 8, 2, 400 + i).noise(0.05).certified(false)).unwrap();
            Problem {
                dictionary: inst.dictionary,
                auxiliary: None,
                signal: inst.signal,
                lambda_star: 0.05,
            }
        })
        .collect();
    let cfg = SolverConfig::new(40);
    for kind in [SolverKind::Ista, SolverKind::Fista, SolverKind::Istc, SolverKind::GeneralizedIstc] {
        let first = batch_solve(&problems, kind, &cfg).unwrap();
        let second = batch_solve(&problems, kind, &cfg).unwrap();
        assert_eq!(first, second);
        for (p, got) in problems.iter().zip(&first) {
            assert_eq!(&solve(p, kind, &cfg).unwrap(), got);
        }
    }
}

#[test]
fn zero_signal_gives_zero_code_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = gaussian_dictionary(&mut rng, 8, 12).unwrap();
    let beta = Signal::zeros(8);
    let oracle = exact_positive_lasso(&d, &beta, 0.1, 12).unwrap();
    assert!(oracle.values().iter().all(|v| *v == 0.0));
    let (ista, _) = solve_ista(&d, &beta, 0.1, &SolverConfig::new(10)).unwrap();
    assert!(ista.support().is_empty());
}

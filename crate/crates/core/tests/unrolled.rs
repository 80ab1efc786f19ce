use std::fs;

use istc_core::harness::{load_checkpoint, run_train_toy, ExperimentConfig, ExperimentKind};
use istc_core::unrolled::{
    sparsity_at, train_toy, unrolled_forward, ToyClassifier, ToyDataset, TrainConfig, UnrolledParams,
};
use istc_core::{make_schedule, solve_generalized_istc, AuxiliaryMatrix, Error, Signal, SparseCode};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn forward_pass_is_the_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let (p, m, n) = (rng.random_range(2..10), rng.random_range(2..10), rng.random_range(1..15));
        let tied = i % 2 == 0;
        let mut params = UnrolledParams::random(p, m, n, rng.random_range(0.01..0.5), tied, rng.random());
        if let Some(w) = params.auxiliary.as_mut() {
            w.mapv_inplace(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal));
        }
        if params.renormalize().is_err() {
            continue;
        }
        let beta = Array1::from_shape_fn(p, |_| rng.sample::<f64, _>(StandardNormal));
        let (code, cache) = unrolled_forward(&params, beta.view()).unwrap();
        let d = istc_core::Dictionary::from_unit_columns(params.dictionary.clone()).unwrap();
        let w = match &params.auxiliary {
            Some(raw) => AuxiliaryMatrix::paired(raw, &d).unwrap(),
            None => AuxiliaryMatrix::tied(&d),
        };
        let schedule = make_schedule(cache.lambda_max, params.lambda_star(), n).unwrap();
        let (expected, _) = solve_generalized_istc(&d, &w, &Signal::new(beta).unwrap(), &schedule).unwrap();
        let tol = 1e-12 * (1.0 + expected.values().iter().fold(0.0f64, |a, v| a.max(*v)));
        let close = code
            .values()
            .iter()
            .zip(expected.values())
            .all(|(a, b)| (a - b).abs() <= tol);
        assert!(close, "instance {i}: {code:?} vs {expected:?}");
    }
}

#[test]
fn trained_network_is_sparse_and_threshold_controls_sparsity() {
    let data = ToyDataset::two_class(16, 12, 2, 500, 200, 0.05, 21).unwrap();
    let params = UnrolledParams::random(16, 12, 12, 0.8, false, 22);
    let classifier = ToyClassifier::random(2, 12, 23);
    let config = TrainConfig {
        epochs: 25,
        seed: 24,
        ..TrainConfig::default()
    };
    let model = train_toy(&data, params, classifier, &config).unwrap();
    let last = model.metrics.last().unwrap();
    assert!(last.validation_accuracy >= 0.9, "{last:?}");
    assert!(last.mean_sparsity < 0.5, "{last:?}");
    let lambda = model.state.params.lambda_star();
    let base = sparsity_at(&model.state.params, &data.validation, lambda).unwrap();
    let doubled = sparsity_at(&model.state.params, &data.validation, 2.0 * lambda).unwrap();
    assert!(doubled < base, "{doubled} vs {base}");
}

fn train_config(out: &std::path::Path, epochs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentKind::TrainToy);
    cfg.seed = Some(5);
    cfg.out = Some(out.to_path_buf());
    cfg.train.epochs = epochs;
    cfg.train_size = 60;
    cfg.validation_size = 20;
    cfg
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = run_train_toy(&train_config(&tmp.path().join("full"), 4)).unwrap();

    run_train_toy(&train_config(&tmp.path().join("first"), 2)).unwrap();
    let mut resumed_cfg = train_config(&tmp.path().join("second"), 4);
    resumed_cfg.resume = Some(tmp.path().join("first/checkpoint"));
    let resumed = run_train_toy(&resumed_cfg).unwrap();

    assert_eq!(resumed.metrics.len(), 2);
    assert_eq!(resumed.state, full.state);
    assert_eq!(full.metrics[2..], resumed.metrics[..]);
    let reloaded = load_checkpoint(&tmp.path().join("second/checkpoint")).unwrap();
    assert_eq!(reloaded, full.state);
}

#[test]
fn divergence_is_reported_with_partial_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = train_config(tmp.path(), 3);
    cfg.train.learning_rate = 1e308;
    cfg.train.clip_norm = None;
    match run_train_toy(&cfg) {
        Err(Error::DivergedLoss { epoch }) => assert!(epoch < 3),
        other => panic!("expected divergence, got {other:?}"),
    }
    let csv = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_loss,val_acc,mean_sparsity\n"));
    assert!(load_checkpoint(&tmp.path().join("checkpoint")).is_ok());
}

#[test]
fn codes_are_nonnegative() {
    let params = UnrolledParams::random(8, 6, 10, 0.1, true, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let beta = Array1::from_shape_fn(8, |_| rng.sample::<f64, _>(StandardNormal));
        let (code, _) = unrolled_forward(&params, beta.view()).unwrap();
        assert!(SparseCode::new(code.values().to_owned()).is_ok());
    }
}

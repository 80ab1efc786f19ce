//! Fixtures shared by the benchmarks.

use istc_core::certify::PlantedInstance;
use istc_core::{generate_planted, ProblemSpec};
use ndarray::Array1;

/// A planted instance with `lambda_star = 0.1 ||D^t beta||_inf`.
pub fn planted(signal_dim: usize, atom_count: usize, support: usize, seed: u64) -> (PlantedInstance, f64, f64) {
    let inst = generate_planted(&ProblemSpec::new(signal_dim, atom_count, support, seed).noise(0.05).certified(false))
        .expect("valid spec");
    let top = max_abs(&inst.dictionary.correlate(inst.signal.values()));
    (inst, 0.1 * top, top)
}

pub fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

//! Positive proximal operator and the iterative solvers: ISTA, FISTA, ISTC
//! (homotopy thresholding with a geometric schedule) and generalized ISTC
//! with an auxiliary matrix.
//!
//! Every solver starts from `alpha_0 = 0`. Traces hold one record per
//! iterate including the initial one, so a run of `n` iterations yields
//! `n + 1` records.

use std::io::Write;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::dictionary::{
    lagrangian_raw, linf_distance, linf_norm, spectral_norm_sq, AuxiliaryMatrix, Dictionary,
    Signal, SparseCode,
};
use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// `rho(v - lambda)` elementwise, the minimizer of
/// `1/2 ||a - v||^2 + lambda * sum(a)` over `a >= 0`.
pub fn positive_prox(v: ArrayView1<f64>, lambda: f64) -> Array1<f64> {
    v.mapv(|x| relu(x - lambda))
}

#[inline]
pub fn relu(a: f64) -> f64 {
    if a > 0.0 {
        a
    } else {
        0.0
    }
}

/// Geometric thresholds `lambda_n = lambda_max (lambda_max / lambda_star)^(-n/N)`
/// for `n = 1..=N`. Index 0 is the virtual pre-iteration threshold
/// `lambda_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSchedule {
    lambda_max: f64,
    lambda_star: f64,
    n_layers: usize,
    gamma: f64,
}

pub fn make_schedule(lambda_max: f64, lambda_star: f64, n_layers: usize) -> Result<ThresholdSchedule> {
    let bad = || Error::BadRange {
        lambda_max,
        lambda_star,
        n_layers,
    };
    if !(lambda_star > 0.0) || !lambda_max.is_finite() || lambda_star >= lambda_max || n_layers == 0 {
        return Err(bad());
    }
    let gamma = (lambda_max / lambda_star).powf(1.0 / n_layers as f64);
    if !(gamma > 1.0) {
        return Err(bad());
    }
    Ok(ThresholdSchedule {
        lambda_max,
        lambda_star,
        n_layers,
        gamma,
    })
}

impl ThresholdSchedule {
    /// Schedule with a prescribed decay ratio: `lambda_star = lambda_max gamma^-N`.
    pub fn from_gamma(lambda_max: f64, gamma: f64, n_layers: usize) -> Result<Self> {
        if !(gamma > 1.0) {
            return Err(Error::GammaOutOfRange(gamma));
        }
        make_schedule(lambda_max, lambda_max * gamma.powi(-(n_layers as i32)), n_layers)
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `lambda_n`; `threshold(0) == lambda_max`.
    pub fn threshold(&self, n: usize) -> f64 {
        if n == 0 {
            return self.lambda_max;
        }
        let exponent = -(n as f64) / self.n_layers as f64;
        self.lambda_max * (self.lambda_max / self.lambda_star).powf(exponent)
    }

    /// `[lambda_1, ..., lambda_N]`
    pub fn thresholds(&self) -> Vec<f64> {
        (1..=self.n_layers).map(|n| self.threshold(n)).collect()
    }
}

/// Default `lambda_max`: `||W^t beta||_inf`, raised to `2 lambda_star` when
/// the correlations already sit below the target (the zero code is then
/// optimal and the schedule only needs to be well formed).
pub fn default_lambda_max(correlations: ArrayView1<f64>, lambda_star: f64) -> f64 {
    let top = linf_norm(correlations);
    if top > lambda_star {
        top
    } else {
        2.0 * lambda_star
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Gradient step for ISTA and FISTA; `None` picks `0.99 / ||D^t D||`.
    pub step_size: Option<f64>,
    pub n_iterations: usize,
    pub record_trace: bool,
}

impl SolverConfig {
    pub fn new(n_iterations: usize) -> Self {
        Self {
            step_size: None,
            n_iterations,
            record_trace: true,
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step_size = Some(step);
        self
    }

    pub fn without_trace(mut self) -> Self {
        self.record_trace = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Threshold applied to reach this iterate (`lambda_max` for ISTC's
    /// initial row, `lambda_star` for ISTA/FISTA).
    pub threshold: f64,
    /// Lagrangian at the target `lambda_star`.
    pub lagrangian: f64,
    pub support: Vec<usize>,
    pub code: Array1<f64>,
    pub linf_to_ref: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    fn push(
        &mut self,
        iteration: usize,
        threshold: f64,
        ctx: &Objective<'_>,
        code: &Array1<f64>,
    ) {
        self.records.push(TraceRecord {
            iteration,
            threshold,
            lagrangian: ctx.value(code.view()),
            support: crate::dictionary::support_of(code.view()),
            code: code.clone(),
            linf_to_ref: None,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fills `linf_to_ref` on every record.
    pub fn attach_reference(&mut self, reference: ArrayView1<f64>) {
        for r in &mut self.records {
            r.linf_to_ref = Some(linf_distance(r.code.view(), reference));
        }
    }

    pub fn lagrangians(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lagrangian).collect()
    }

    /// CSV with header `iter,lambda_n,lagrangian,support_size,linf_to_ref`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,lambda_n,lagrangian,support_size,linf_to_ref")?;
        for r in &self.records {
            let linf = r.linf_to_ref.map(fmt_f64).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{}",
                r.iteration,
                fmt_f64(r.threshold),
                fmt_f64(r.lagrangian),
                r.support.len(),
                linf
            )?;
        }
        Ok(())
    }
}

struct Objective<'a> {
    atoms: ArrayView2<'a, f64>,
    beta: ArrayView1<'a, f64>,
    lambda_star: f64,
}

impl Objective<'_> {
    fn value(&self, code: ArrayView1<f64>) -> f64 {
        lagrangian_raw(self.atoms, self.beta, code, self.lambda_star)
    }
}

fn check_signal(dictionary: &Dictionary, beta: &Signal) -> Result<()> {
    if beta.dim() != dictionary.signal_dim() {
        return Err(Error::shape(dictionary.signal_dim(), beta.dim()));
    }
    Ok(())
}

fn resolve_step(dictionary: &Dictionary, cfg: &SolverConfig) -> Result<f64> {
    let norm = spectral_norm_sq(dictionary)?;
    let bound = 1.0 / norm;
    let step = cfg.step_size.unwrap_or(0.99 * bound);
    if !(step > 0.0 && step < bound) {
        return Err(Error::StepTooLarge { step, bound });
    }
    Ok(step)
}

/// `alpha + step * D^t (beta - D alpha)`
fn gradient_step(
    dictionary: &Dictionary,
    beta: ArrayView1<f64>,
    alpha: &Array1<f64>,
    step: f64,
) -> Array1<f64> {
    let residual = &beta - &dictionary.synthesize(alpha.view());
    alpha + &(dictionary.correlate(residual.view()) * step)
}

/// Proximal gradient descent at fixed threshold `lambda_star`.
pub fn solve_ista(
    dictionary: &Dictionary,
    beta: &Signal,
    lambda_star: f64,
    cfg: &SolverConfig,
) -> Result<(SparseCode, ConvergenceTrace)> {
    check_signal(dictionary, beta)?;
    let step = resolve_step(dictionary, cfg)?;
    let objective = Objective {
        atoms: dictionary.atoms(),
        beta: beta.values(),
        lambda_star,
    };
    let mut trace = ConvergenceTrace::default();
    let mut alpha = Array1::zeros(dictionary.atom_count());
    if cfg.record_trace {
        trace.push(0, lambda_star, &objective, &alpha);
    }
    for n in 1..=cfg.n_iterations {
        let z = gradient_step(dictionary, beta.values(), &alpha, step);
        alpha = positive_prox(z.view(), step * lambda_star);
        if cfg.record_trace {
            trace.push(n, lambda_star, &objective, &alpha);
        }
    }
    Ok((SparseCode::from_nonnegative(alpha), trace))
}

/// FISTA with the standard momentum sequence `t_1 = 1`,
/// `t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2`. The trace follows the `alpha`
/// iterates, not the extrapolated points.
pub fn solve_fista(
    dictionary: &Dictionary,
    beta: &Signal,
    lambda_star: f64,
    cfg: &SolverConfig,
) -> Result<(SparseCode, ConvergenceTrace)> {
    check_signal(dictionary, beta)?;
    let step = resolve_step(dictionary, cfg)?;
    let objective = Objective {
        atoms: dictionary.atoms(),
        beta: beta.values(),
        lambda_star,
    };
    let mut trace = ConvergenceTrace::default();
    let mut alpha: Array1<f64> = Array1::zeros(dictionary.atom_count());
    let mut y = alpha.clone();
    let mut t = 1.0f64;
    if cfg.record_trace {
        trace.push(0, lambda_star, &objective, &alpha);
    }
    for n in 1..=cfg.n_iterations {
        let z = gradient_step(dictionary, beta.values(), &y, step);
        let next = positive_prox(z.view(), step * lambda_star);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + &((&next - &alpha) * ((t - 1.0) / t_next));
        alpha = next;
        t = t_next;
        if cfg.record_trace {
            trace.push(n, lambda_star, &objective, &alpha);
        }
    }
    Ok((SparseCode::from_nonnegative(alpha), trace))
}

/// Pre-activation of one thresholding layer:
/// `alpha + W^t (beta - D alpha) - lambda`.
pub(crate) fn layer_preactivation(
    atoms: ArrayView2<f64>,
    auxiliary: ArrayView2<f64>,
    beta: ArrayView1<f64>,
    alpha: &Array1<f64>,
    lambda: f64,
) -> Array1<f64> {
    let residual = &beta - &atoms.dot(alpha);
    let mut z = alpha + &auxiliary.t().dot(&residual);
    z.mapv_inplace(|v| v - lambda);
    z
}

/// ISTC: one unit-step thresholding iteration per threshold of the schedule.
pub fn solve_istc(
    dictionary: &Dictionary,
    beta: &Signal,
    schedule: &ThresholdSchedule,
) -> Result<(SparseCode, ConvergenceTrace)> {
    solve_generalized_istc(dictionary, &AuxiliaryMatrix::tied(dictionary), beta, schedule)
}

/// Generalized ISTC: `alpha_n = rho(alpha_{n-1} + W^t (beta - D alpha_{n-1}) - lambda_n)`.
pub fn solve_generalized_istc(
    dictionary: &Dictionary,
    auxiliary: &AuxiliaryMatrix,
    beta: &Signal,
    schedule: &ThresholdSchedule,
) -> Result<(SparseCode, ConvergenceTrace)> {
    check_signal(dictionary, beta)?;
    if auxiliary.atoms().dim() != dictionary.atoms().dim() {
        return Err(Error::shape(
            format!("{:?}", dictionary.atoms().dim()),
            format!("{:?}", auxiliary.atoms().dim()),
        ));
    }
    let objective = Objective {
        atoms: dictionary.atoms(),
        beta: beta.values(),
        lambda_star: schedule.lambda_star(),
    };
    let mut trace = ConvergenceTrace::default();
    let mut alpha = Array1::zeros(dictionary.atom_count());
    trace.push(0, schedule.threshold(0), &objective, &alpha);
    for n in 1..=schedule.n_layers() {
        let lambda = schedule.threshold(n);
        let z = layer_preactivation(dictionary.atoms(), auxiliary.atoms(), beta.values(), &alpha, lambda);
        alpha = z.mapv(relu);
        trace.push(n, lambda, &objective, &alpha);
    }
    Ok((SparseCode::from_nonnegative(alpha), trace))
}

/// One coding problem for [`batch_solve`].
#[derive(Debug, Clone)]
pub struct Problem {
    pub dictionary: Dictionary,
    /// Used by generalized ISTC only; `None` means `W = D`.
    pub auxiliary: Option<AuxiliaryMatrix>,
    pub signal: Signal,
    pub lambda_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Ista,
    Fista,
    Istc,
    GeneralizedIstc,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Ista => "ista",
            SolverKind::Fista => "fista",
            SolverKind::Istc => "istc",
            SolverKind::GeneralizedIstc => "gistc",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ista" => Ok(SolverKind::Ista),
            "fista" => Ok(SolverKind::Fista),
            "istc" => Ok(SolverKind::Istc),
            "gistc" | "generalized-istc" => Ok(SolverKind::GeneralizedIstc),
            other => Err(Error::Config(format!("unknown solver {other:?}"))),
        }
    }
}

/// Runs `kind` on one problem. ISTC variants use `cfg.n_iterations` layers
/// with `lambda_max` from [`default_lambda_max`]; zero layers return the
/// zero code and a trace holding only the initial row.
pub fn solve(problem: &Problem, kind: SolverKind, cfg: &SolverConfig) -> Result<(SparseCode, ConvergenceTrace)> {
    match kind {
        SolverKind::Ista => solve_ista(&problem.dictionary, &problem.signal, problem.lambda_star, cfg),
        SolverKind::Fista => solve_fista(&problem.dictionary, &problem.signal, problem.lambda_star, cfg),
        SolverKind::Istc | SolverKind::GeneralizedIstc => {
            let tied;
            let auxiliary = match (kind, &problem.auxiliary) {
                (SolverKind::GeneralizedIstc, Some(w)) => w,
                _ => {
                    tied = AuxiliaryMatrix::tied(&problem.dictionary);
                    &tied
                }
            };
            check_signal(&problem.dictionary, &problem.signal)?;
            let correlations = auxiliary.correlate(problem.signal.values());
            let lambda_max = default_lambda_max(correlations.view(), problem.lambda_star);
            if cfg.n_iterations == 0 {
                let alpha = Array1::zeros(problem.dictionary.atom_count());
                let mut trace = ConvergenceTrace::default();
                let objective = Objective {
                    atoms: problem.dictionary.atoms(),
                    beta: problem.signal.values(),
                    lambda_star: problem.lambda_star,
                };
                trace.push(0, lambda_max, &objective, &alpha);
                return Ok((SparseCode::from_nonnegative(alpha), trace));
            }
            let schedule = make_schedule(lambda_max, problem.lambda_star, cfg.n_iterations)?;
            solve_generalized_istc(&problem.dictionary, auxiliary, &problem.signal, &schedule)
        }
    }
}

/// Solves every problem (in parallel) and returns results in input order.
pub fn batch_solve(
    problems: &[Problem],
    kind: SolverKind,
    cfg: &SolverConfig,
) -> Result<Vec<(SparseCode, ConvergenceTrace)>> {
    if let Some(first) = problems.first() {
        let dims = first.dictionary.atoms().dim();
        if let Some((index, p)) = problems
            .iter()
            .enumerate()
            .find(|(_, p)| p.dictionary.atoms().dim() != dims)
        {
            return Err(Error::Problem {
                index,
                source: Box::new(Error::shape(
                    format!("{dims:?}"),
                    format!("{:?}", p.dictionary.atoms().dim()),
                )),
            });
        }
    }
    problems
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            solve(p, kind, cfg).map_err(|e| Error::Problem {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{lagrangian, normalize_columns};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn scalar_problem() -> (Dictionary, Signal) {
        (
            normalize_columns(&array![[1.0]]).unwrap(),
            Signal::new(array![1.0]).unwrap(),
        )
    }

    #[test]
    fn prox_examples() {
        assert_eq!(positive_prox(array![1.0, 0.3, -0.2].view(), 0.5), array![0.5, 0.0, 0.0]);
        assert_eq!(positive_prox(array![-1.0, 2.0].view(), 0.0), array![0.0, 2.0]);
    }

    #[test]
    fn ista_scalar_recursion() {
        let (d, beta) = scalar_problem();
        let cfg = SolverConfig::new(2).with_step(0.5);
        let (_, trace) = solve_ista(&d, &beta, 0.5, &cfg).unwrap();
        assert_eq!(trace.len(), 3);
        assert_abs_diff_eq!(trace.records[1].code[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(trace.records[2].code[0], 0.375, epsilon = 1e-15);
        let (limit, _) = solve_ista(&d, &beta, 0.5, &SolverConfig::new(200).with_step(0.5)).unwrap();
        assert_abs_diff_eq!(limit.values()[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn step_bound_enforced() {
        let (d, beta) = scalar_problem();
        for cfg in [SolverConfig::new(1).with_step(1.0), SolverConfig::new(1).with_step(0.0)] {
            assert!(matches!(solve_ista(&d, &beta, 0.1, &cfg), Err(Error::StepTooLarge { .. })));
            assert!(matches!(solve_fista(&d, &beta, 0.1, &cfg), Err(Error::StepTooLarge { .. })));
        }
    }

    #[test]
    fn zero_signal_stays_zero() {
        let d = normalize_columns(&array![[1.0, 0.5, 0.1], [0.2, 1.0, -0.3]]).unwrap();
        let beta = Signal::zeros(2);
        let cfg = SolverConfig::new(20);
        for (code, trace) in [
            solve_ista(&d, &beta, 0.1, &cfg).unwrap(),
            solve_fista(&d, &beta, 0.1, &cfg).unwrap(),
            solve_istc(&d, &beta, &make_schedule(1.0, 0.1, 20).unwrap()).unwrap(),
        ] {
            assert!(code.support().is_empty());
            assert!(trace.records.iter().all(|r| r.support.is_empty()));
        }
    }

    #[test]
    fn fista_and_ista_share_identity_fixed_point() {
        let d = normalize_columns(&Array2::eye(3)).unwrap();
        let beta = Signal::new(array![1.0, 0.2, -0.5]).unwrap();
        let expected = positive_prox(beta.values(), 0.3);
        for solver in [solve_ista, solve_fista] {
            let (code, _) = solver(&d, &beta, 0.3, &SolverConfig::new(300)).unwrap();
            for (a, b) in code.values().iter().zip(expected.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn schedule_examples() {
        let s = make_schedule(1.0, 0.01, 2).unwrap();
        assert_abs_diff_eq!(s.thresholds()[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.thresholds()[1], 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(s.gamma(), 10.0, epsilon = 1e-12);
        let s = make_schedule(2.0, 0.25, 3).unwrap();
        for (got, want) in s.thresholds().iter().zip([1.0, 0.5, 0.25]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(s.gamma(), 2.0, epsilon = 1e-14);
        assert_eq!(s.threshold(0), 2.0);
        assert!(matches!(make_schedule(1.0, 1.0, 5), Err(Error::BadRange { .. })));
        assert!(matches!(make_schedule(1.0, 2.0, 5), Err(Error::BadRange { .. })));
        assert!(matches!(make_schedule(1.0, 0.0, 5), Err(Error::BadRange { .. })));
        assert!(matches!(make_schedule(1.0, 0.5, 0), Err(Error::BadRange { .. })));
    }

    #[test]
    fn istc_on_orthonormal_is_fresh_threshold() {
        let theta: f64 = 0.3;
        let (c, s) = (theta.cos(), theta.sin());
        let d = normalize_columns(&array![[c, -s], [s, c]]).unwrap();
        let beta = Signal::new(array![0.9, 0.4]).unwrap();
        let schedule = make_schedule(2.0, 0.05, 7).unwrap();
        let (code, _) = solve_istc(&d, &beta, &schedule).unwrap();
        let expected = positive_prox(d.correlate(beta.values()).view(), 0.05);
        for (a, b) in code.values().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn generalized_with_tied_w_matches_istc_bitwise() {
        let d = normalize_columns(&array![[1.0, 0.4, 0.1, 0.3], [0.2, 1.0, -0.3, 0.2], [0.0, 0.1, 1.0, 0.6]])
            .unwrap();
        let beta = Signal::new(array![0.8, -0.2, 0.5]).unwrap();
        let schedule = make_schedule(1.0, 0.02, 12).unwrap();
        let a = solve_istc(&d, &beta, &schedule).unwrap();
        let b = solve_generalized_istc(&d, &AuxiliaryMatrix::tied(&d), &beta, &schedule).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generalized_rejects_shape_mismatch() {
        let d = normalize_columns(&Array2::eye(3)).unwrap();
        let beta = Signal::zeros(2);
        let schedule = make_schedule(1.0, 0.1, 3).unwrap();
        assert!(matches!(solve_istc(&d, &beta, &schedule), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn trace_csv_format() {
        let (d, beta) = scalar_problem();
        let (_, mut trace) = solve_ista(&d, &beta, 0.5, &SolverConfig::new(1).with_step(0.5)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,lambda_n,lagrangian,support_size,linf_to_ref");
        assert_eq!(lines[1], "0,5.0000000000000000e-1,5.0000000000000000e-1,0,");
        trace.attach_reference(array![0.5].view());
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().nth(2).unwrap().ends_with(",2.5000000000000000e-1"));
    }

    #[test]
    fn batch_empty_and_single() {
        assert!(batch_solve(&[], SolverKind::Ista, &SolverConfig::new(5)).unwrap().is_empty());
        let d = normalize_columns(&array![[1.0, 0.3], [0.0, 1.0]]).unwrap();
        let p = Problem {
            dictionary: d.clone(),
            auxiliary: None,
            signal: Signal::new(array![1.0, 0.5]).unwrap(),
            lambda_star: 0.1,
        };
        let cfg = SolverConfig::new(12);
        let batch = batch_solve(std::slice::from_ref(&p), SolverKind::Istc, &cfg).unwrap();
        assert_eq!(batch[0], solve(&p, SolverKind::Istc, &cfg).unwrap());
    }

    #[test]
    fn batch_reports_problem_index() {
        let good = Problem {
            dictionary: normalize_columns(&Array2::eye(2)).unwrap(),
            auxiliary: None,
            signal: Signal::new(array![1.0, 0.0]).unwrap(),
            lambda_star: 0.1,
        };
        let mut bad = good.clone();
        bad.signal = Signal::zeros(3);
        let err = batch_solve(&[good, bad], SolverKind::Fista, &SolverConfig::new(3)).unwrap_err();
        assert!(matches!(err, Error::Problem { index: 1, .. }));
    }

    fn random_instance(p: usize, m: usize, seed: u64) -> (Dictionary, Signal) {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let raw = Array2::from_shape_fn((p, m), |_| next());
        let beta = Array1::from_shape_fn(p, |_| next());
        (normalize_columns(&raw).unwrap(), Signal::new(beta).unwrap())
    }

    proptest! {
        #[test]
        fn prox_nonnegative_and_lipschitz(
            u in proptest::collection::vec(-5.0f64..5.0, 8),
            v in proptest::collection::vec(-5.0f64..5.0, 8),
            lambda in 0.0f64..3.0,
        ) {
            let u = Array1::from(u);
            let v = Array1::from(v);
            let pu = positive_prox(u.view(), lambda);
            let pv = positive_prox(v.view(), lambda);
            prop_assert!(pu.iter().all(|x| *x >= 0.0));
            let d_out = (&pu - &pv).mapv(|x| x * x).sum().sqrt();
            let d_in = (&u - &v).mapv(|x| x * x).sum().sqrt();
            prop_assert!(d_out <= d_in + 1e-12);
        }

        #[test]
        fn ista_lagrangian_non_increasing(seed in any::<u64>(), frac in 0.05f64..0.99, lambda in 0.01f64..0.5) {
            let (d, beta) = random_instance(6, 9, seed);
            let step = frac / spectral_norm_sq(&d).unwrap();
            let (_, trace) = solve_ista(&d, &beta, lambda, &SolverConfig::new(60).with_step(step)).unwrap();
            for w in trace.records.windows(2) {
                prop_assert!(w[1].lagrangian <= w[0].lagrangian + 1e-10);
            }
        }
    }

    #[test]
    fn ista_step_from_kkt_point_is_fixed() {
        for seed in 0..20 {
            let (d, beta) = random_instance(6, 9, seed);
            let star = crate::oracle::exact_positive_lasso(&d, &beta, 0.05, 6).unwrap();
            assert!(crate::oracle::kkt_check(&d, &beta, &star, 0.05, 1e-9));
            let step = 0.99 / spectral_norm_sq(&d).unwrap();
            let z = gradient_step(&d, beta.values(), &star.values().to_owned(), step);
            let next = positive_prox(z.view(), step * 0.05);
            assert!(linf_distance(next.view(), star.values()) < 1e-10);
            assert!(lagrangian(&d, &beta, &star, 0.05).is_finite());
        }
    }
}

//! Hypothesis checks and trace verification for the exponential convergence
//! guarantee of generalized ISTC.
//!
//! For a planted code `alpha0` with support size `s`, cross coherence `mu`
//! and residual `w = beta - D alpha0`, the guarantee holds when `s mu < 1/2`,
//! `1 < gamma < 1 / (2 mu s)`, `lambda_max >= ||W^t beta||_inf` and every
//! threshold stays above
//!
//! ```text
//! lambda_floor = ||W^t w||_inf / (1 - 2 gamma mu s)
//! ```
//!
//! Under those conditions every iterate satisfies
//! `S(alpha_n) ⊆ S(alpha0)` and `||alpha_n - alpha0||_inf <= 2 lambda_n`,
//! with `lambda_n = lambda_max gamma^-n` (index 0 is the zero start).

use std::fmt::Write as _;

use crate::dictionary::{cross_coherence, linf_norm, AuxiliaryMatrix, Dictionary, Signal, SparseCode};
use crate::error::{Error, Result};
use crate::prox::{relu, ConvergenceTrace, ThresholdSchedule};

/// Relative slack for comparing thresholds and bounds that are computed
/// through different (but algebraically equal) floating point routes.
const REL_SLACK: f64 = 1e-9;

/// A synthetic coding problem with a known sparse code.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub dictionary: Dictionary,
    pub auxiliary: AuxiliaryMatrix,
    pub planted_code: SparseCode,
    pub signal: Signal,
    pub residual_bound: f64,
}

impl PlantedInstance {
    pub fn support_size(&self) -> usize {
        self.planted_code.support().len()
    }

    /// `w = beta - D alpha0`
    pub fn residual(&self) -> ndarray::Array1<f64> {
        &self.signal.values() - &self.dictionary.synthesize(self.planted_code.values())
    }

    /// Same instance with a different auxiliary matrix.
    pub fn with_auxiliary(&self, auxiliary: AuxiliaryMatrix) -> Self {
        Self {
            auxiliary,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaFloor {
    Finite(f64),
    /// `1 - 2 gamma mu s <= 0`: no threshold satisfies the hypothesis.
    Unattainable,
}

impl LambdaFloor {
    pub fn value(&self) -> f64 {
        match self {
            LambdaFloor::Finite(v) => *v,
            LambdaFloor::Unattainable => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub s: usize,
    pub mu_tilde: f64,
    pub condition_holds: bool,
    /// Open interval `(1, 1 / (2 mu s))`; `None` when the condition fails.
    pub gamma_range: Option<(f64, f64)>,
    pub gamma: f64,
    pub gamma_in_range: bool,
    pub lambda_max: f64,
    pub lambda_max_ok: bool,
    pub lambda_floor: LambdaFloor,
    /// `||W^t beta||_inf`
    pub correlation_max: f64,
    /// `||W^t w||_inf`
    pub residual_correlation: f64,
}

pub fn certify(instance: &PlantedInstance, gamma: f64, lambda_max: f64) -> Result<Certificate> {
    if !(gamma > 1.0) {
        return Err(Error::GammaOutOfRange(gamma));
    }
    let s = instance.support_size();
    let mu_tilde = cross_coherence(&instance.auxiliary, &instance.dictionary)?;
    let product = s as f64 * mu_tilde;
    let condition_holds = product < 0.5;
    let gamma_range = condition_holds.then(|| (1.0, 1.0 / (2.0 * product)));
    let gamma_in_range = gamma_range.is_some_and(|(lo, hi)| gamma > lo && gamma < hi);
    let correlation_max = linf_norm(instance.auxiliary.correlate(instance.signal.values()).view());
    let residual = instance.residual();
    let residual_correlation = linf_norm(instance.auxiliary.correlate(residual.view()).view());
    let denominator = 1.0 - 2.0 * gamma * product;
    let lambda_floor = if denominator > 0.0 {
        LambdaFloor::Finite(residual_correlation / denominator)
    } else {
        LambdaFloor::Unattainable
    };
    Ok(Certificate {
        s,
        mu_tilde,
        condition_holds,
        gamma_range,
        gamma,
        gamma_in_range,
        lambda_max,
        lambda_max_ok: lambda_max >= correlation_max,
        lambda_floor,
        correlation_max,
        residual_correlation,
    })
}

/// `2 lambda_max gamma^-n`
pub fn error_bound(lambda_max: f64, gamma: f64, n: usize) -> f64 {
    2.0 * lambda_max * gamma.powi(-(n as i32))
}

impl Certificate {
    /// All hypotheses except the per-threshold floor, which depends on the
    /// schedule length.
    pub fn hypotheses_hold(&self) -> bool {
        self.condition_holds && self.gamma_in_range && self.lambda_max_ok
    }

    /// `[2 lambda_max gamma^-n for n in 0..=n_max]`
    pub fn bound_curve(&self, n_max: usize) -> Vec<f64> {
        (0..=n_max).map(|n| error_bound(self.lambda_max, self.gamma, n)).collect()
    }

    /// The schedule with `N` layers at this certificate's `gamma` and
    /// `lambda_max`.
    pub fn schedule(&self, n_layers: usize) -> Result<ThresholdSchedule> {
        ThresholdSchedule::from_gamma(self.lambda_max, self.gamma, n_layers)
    }

    /// Whether every threshold of `schedule` is at or above the floor.
    pub fn respects_floor(&self, schedule: &ThresholdSchedule) -> bool {
        let floor = self.lambda_floor.value();
        (0..=schedule.n_layers()).all(|n| schedule.threshold(n) >= floor)
    }

    /// Largest layer count whose final threshold stays above the floor.
    pub fn max_layers(&self) -> Option<usize> {
        let floor = self.lambda_floor.value();
        if !floor.is_finite() || self.lambda_max < floor {
            return None;
        }
        if floor <= 0.0 {
            return Some(usize::MAX);
        }
        Some(((self.lambda_max / floor).ln() / self.gamma.ln()).floor() as usize)
    }

    /// Flat `key = value` report in a fixed key order.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        let (lo, hi) = match self.gamma_range {
            Some((lo, hi)) => (lo.to_string(), hi.to_string()),
            None => ("empty".into(), "empty".into()),
        };
        let floor = match self.lambda_floor {
            LambdaFloor::Finite(v) => format!("{v:.16e}"),
            LambdaFloor::Unattainable => "unattainable".into(),
        };
        let _ = writeln!(out, "s = {}", self.s);
        let _ = writeln!(out, "mu_tilde = {:.16e}", self.mu_tilde);
        let _ = writeln!(out, "s_mu_tilde = {:.16e}", self.s as f64 * self.mu_tilde);
        let _ = writeln!(out, "condition_holds = {}", self.condition_holds);
        let _ = writeln!(out, "gamma_range_low = {lo}");
        let _ = writeln!(out, "gamma_range_high = {hi}");
        let _ = writeln!(out, "gamma = {:.16e}", self.gamma);
        let _ = writeln!(out, "gamma_in_range = {}", self.gamma_in_range);
        let _ = writeln!(out, "lambda_max = {:.16e}", self.lambda_max);
        let _ = writeln!(out, "lambda_max_ok = {}", self.lambda_max_ok);
        let _ = writeln!(out, "correlation_max = {:.16e}", self.correlation_max);
        let _ = writeln!(out, "residual_correlation = {:.16e}", self.residual_correlation);
        let _ = writeln!(out, "lambda_floor = {floor}");
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    /// Hypotheses hold and every threshold respects the floor, so the
    /// checks below are guaranteed to pass rather than empirical.
    pub guaranteed: bool,
    pub iterations_checked: usize,
    pub first_containment_violation: Option<usize>,
    pub first_bound_violation: Option<usize>,
    /// `max_n ||alpha_n - alpha0||_inf / (2 lambda_n)`
    pub worst_bound_ratio: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.first_containment_violation.is_none() && self.first_bound_violation.is_none()
    }

    pub fn first_violation(&self) -> Option<usize> {
        match (self.first_containment_violation, self.first_bound_violation) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn to_report(&self) -> String {
        let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |n| n.to_string());
        let status = if self.guaranteed { "guaranteed" } else { "not guaranteed" };
        format!(
            "checks = {status}\niterations_checked = {}\nfirst_containment_violation = {}\nfirst_bound_violation = {}\nworst_bound_ratio = {:.16e}\npassed = {}\n",
            self.iterations_checked,
            opt(self.first_containment_violation),
            opt(self.first_bound_violation),
            self.worst_bound_ratio,
            self.passed()
        )
    }
}

/// Checks support containment and the `2 lambda_n` error bound on every
/// record of a generalized ISTC trace.
pub fn verify_trace(
    instance: &PlantedInstance,
    trace: &ConvergenceTrace,
    certificate: &Certificate,
) -> Result<VerificationReport> {
    let planted = instance.planted_code.values();
    let planted_support = instance.planted_code.support();
    let floor = certificate.lambda_floor.value();
    let mut floor_respected = true;
    let mut report = VerificationReport {
        guaranteed: false,
        iterations_checked: trace.records.len(),
        first_containment_violation: None,
        first_bound_violation: None,
        worst_bound_ratio: 0.0,
    };
    for record in &trace.records {
        let n = record.iteration;
        let expected = certificate.lambda_max * certificate.gamma.powi(-(n as i32));
        if (record.threshold - expected).abs() > REL_SLACK * expected.abs() {
            return Err(Error::ScheduleMismatch(format!(
                "iteration {n}: threshold {} but certificate implies {expected}",
                record.threshold
            )));
        }
        if record.code.len() != planted.len() {
            return Err(Error::ScheduleMismatch(format!(
                "iteration {n}: code has {} entries, planted code has {}",
                record.code.len(),
                planted.len()
            )));
        }
        floor_respected &= record.threshold >= floor;
        let contained = record
            .support
            .iter()
            .all(|m| planted_support.binary_search(m).is_ok());
        if !contained && report.first_containment_violation.is_none() {
            report.first_containment_violation = Some(n);
        }
        let error = crate::dictionary::linf_distance(record.code.view(), planted);
        let bound = 2.0 * record.threshold;
        let ratio = if bound > 0.0 { error / bound } else { f64::INFINITY };
        if ratio.is_nan() || ratio > report.worst_bound_ratio {
            report.worst_bound_ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
        }
        if !(error <= bound * (1.0 + REL_SLACK)) && report.first_bound_violation.is_none() {
            report.first_bound_violation = Some(n);
        }
    }
    report.guaranteed = certificate.hypotheses_hold() && floor_respected;
    Ok(report)
}

/// `|rho_lambda(a1 + a2) - a1| <= lambda + |a2|` with
/// `rho_lambda(a) = max(a - lambda, 0)`. The inequality holds for every
/// `a1 >= 0` (the planted coefficients); the comparison allows a few ulps of
/// rounding.
pub fn soft_threshold_inequality_probe(alpha1: f64, alpha2: f64, lambda: f64) -> bool {
    let lhs = (relu(alpha1 + alpha2 - lambda) - alpha1).abs();
    let rhs = lambda + alpha2.abs();
    let ulps = 4.0 * f64::EPSILON * (alpha1.abs() + alpha2.abs() + lambda.abs());
    lhs <= rhs + ulps
}

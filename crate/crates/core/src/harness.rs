//! Seeded experiments behind the `istc` command line tool.
//!
//! Every run reads an [`ExperimentConfig`] (flat `key = value` text),
//! computes in parallel where the work is independent, and writes all
//! artifacts from a single thread so that a fixed config and seed give
//! byte-identical output directories. Each directory gets a `manifest.txt`
//! with the tool version and the resolved config; the output path itself is
//! left out so that two runs into different directories can be compared
//! file by file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::certify::{certify, verify_trace, Certificate, PlantedInstance, VerificationReport};
use crate::dictionary::{cross_coherence, lagrangian, linf_distance, linf_norm, relative_mse, SparseCode};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, load_image, load_matrix, save_matrix, save_tensor};
use crate::oracle::{adversarial_auxiliary_at_least, exact_positive_lasso, generate_planted, kkt_check, ProblemSpec};
use crate::prox::{
    default_lambda_max, make_schedule, solve, solve_generalized_istc, ConvergenceTrace, Problem, SolverConfig,
    SolverKind, ThresholdSchedule,
};
use crate::scattering::{
    apply_reduction, build_morlet_bank, channel_manifest, fit_reduction, scatter, synthetic_image, ReductionOperator,
    ScatteringConfig, ScatteringOutput, Standardizer,
};
use crate::unrolled::{
    train_epoch, EpochMetrics, LambdaMaxPolicy, ToyClassifier, ToyDataset, TrainConfig, TrainState, UnrolledParams,
};

pub const TOOL_VERSION: &str = concat!("istc ", env!("CARGO_PKG_VERSION"));

const KKT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Benchmark,
    Certify,
    Scatter,
    TrainToy,
    OracleCheck,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Benchmark => "benchmark",
            ExperimentKind::Certify => "certify",
            ExperimentKind::Scatter => "scatter",
            ExperimentKind::TrainToy => "train-toy",
            ExperimentKind::OracleCheck => "oracle-check",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "benchmark" => ExperimentKind::Benchmark,
            "certify" => ExperimentKind::Certify,
            "scatter" => ExperimentKind::Scatter,
            "train-toy" => ExperimentKind::TrainToy,
            "oracle-check" => ExperimentKind::OracleCheck,
            other => return Err(Error::Config(format!("unknown experiment {other:?}"))),
        })
    }
}

/// Recognized config keys, in manifest order. CLI flags mirror these
/// one-to-one.
pub const CONFIG_KEYS: &[&str] = &[
    "experiment",
    "seed",
    "out",
    "signal_dim",
    "atom_count",
    "support_size",
    "noise",
    "coef_low",
    "coef_high",
    "certified",
    "instances",
    "lambda_fraction",
    "n_iterations",
    "step_size",
    "solvers",
    "max_support",
    "adversarial_strength",
    "adversarial_min_coherence",
    "gamma_fraction",
    "oracle_tolerance",
    "j_max",
    "n_angles",
    "n_phases",
    "n_colors",
    "height",
    "width",
    "images",
    "synthetic_images",
    "reduce_dims",
    "epochs",
    "learning_rate",
    "lr_milestones",
    "lr_decay",
    "batch_size",
    "clip_norm",
    "tied",
    "n_layers",
    "lambda_star_init",
    "dataset_signal_dim",
    "dataset_atom_count",
    "dataset_support",
    "train_size",
    "validation_size",
    "dataset_noise",
    "shuffle_labels",
    "resume",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    // planted problems
    pub signal_dim: usize,
    pub atom_count: usize,
    pub support_size: usize,
    pub noise: f64,
    pub coefficient_range: (f64, f64),
    pub certified: bool,
    pub instances: usize,
    /// `lambda_star = lambda_fraction * ||D^t beta||_inf` per instance.
    pub lambda_fraction: f64,
    pub n_iterations: usize,
    pub step_size: Option<f64>,
    pub solvers: Vec<SolverKind>,
    /// Oracle enumeration cap; defaults to `min(M, s + 3)`.
    pub max_support: Option<usize>,
    /// Replaces `W` by a high cross-coherence matrix when set.
    pub adversarial_strength: Option<f64>,
    pub adversarial_min_coherence: f64,
    /// Position of `gamma` inside the admissible interval `(1, 1/(2 mu s))`.
    pub gamma_fraction: f64,
    pub oracle_tolerance: f64,
    // scattering
    pub scattering: ScatteringConfig,
    pub images: Vec<PathBuf>,
    pub synthetic_images: usize,
    pub reduce_dims: Option<usize>,
    // toy training
    pub train: TrainConfig,
    pub tied: bool,
    pub n_layers: usize,
    pub lambda_star_init: f64,
    pub dataset_signal_dim: usize,
    pub dataset_atom_count: usize,
    pub dataset_support: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub dataset_noise: f64,
    pub shuffle_labels: bool,
    pub resume: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: None,
            out: None,
            signal_dim: 32,
            atom_count: 8,
            support_size: 1,
            noise: 0.05,
            coefficient_range: (0.5, 1.5),
            certified: true,
            instances: 50,
            lambda_fraction: 0.1,
            n_iterations: 12,
            step_size: None,
            solvers: vec![SolverKind::Ista, SolverKind::Fista, SolverKind::Istc],
            max_support: None,
            adversarial_strength: None,
            adversarial_min_coherence: 10.0,
            gamma_fraction: 0.5,
            oracle_tolerance: 1e-6,
            scattering: ScatteringConfig::default(),
            images: Vec::new(),
            synthetic_images: 0,
            reduce_dims: None,
            train: TrainConfig::default(),
            tied: false,
            n_layers: 12,
            lambda_star_init: 0.8,
            dataset_signal_dim: 16,
            dataset_atom_count: 12,
            dataset_support: 2,
            train_size: 500,
            validation_size: 200,
            dataset_noise: 0.05,
            shuffle_labels: false,
            resume: None,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. The experiment kind
    /// comes from the `experiment` key unless `kind` is given.
    pub fn parse(text: &str, kind: Option<ExperimentKind>) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        let mut order = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim().to_string();
            if pairs.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            order.push(key);
        }
        let kind = match (kind, pairs.get("experiment")) {
            (Some(k), _) => k,
            (None, Some(v)) => v.parse()?,
            (None, None) => return Err(Error::Config("missing experiment kind".into())),
        };
        let mut cfg = Self::new(kind);
        for key in order {
            if key == "experiment" {
                continue;
            }
            cfg.set(&key, &pairs[&key])?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, kind: Option<ExperimentKind>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, kind)
    }

    /// Sets one key from its text form. An empty value clears optional keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "experiment" => self.kind = value.parse()?,
            "seed" => self.seed = opt(value, parse_num)?,
            "out" => self.out = opt(value, |v| Ok(PathBuf::from(v)))?,
            "signal_dim" => self.signal_dim = parse_num(value)?,
            "atom_count" => self.atom_count = parse_num(value)?,
            "support_size" => self.support_size = parse_num(value)?,
            "noise" => self.noise = parse_num(value)?,
            "coef_low" => self.coefficient_range.0 = parse_num(value)?,
            "coef_high" => self.coefficient_range.1 = parse_num(value)?,
            "certified" => self.certified = parse_bool(value)?,
            "instances" => self.instances = parse_num(value)?,
            "lambda_fraction" => self.lambda_fraction = parse_num(value)?,
            "n_iterations" => self.n_iterations = parse_num(value)?,
            "step_size" => self.step_size = opt(value, parse_num)?,
            "solvers" => self.solvers = parse_list(value, |v| v.parse())?,
            "max_support" => self.max_support = opt(value, parse_num)?,
            "adversarial_strength" => self.adversarial_strength = opt(value, parse_num)?,
            "adversarial_min_coherence" => self.adversarial_min_coherence = parse_num(value)?,
            "gamma_fraction" => self.gamma_fraction = parse_num(value)?,
            "oracle_tolerance" => self.oracle_tolerance = parse_num(value)?,
            "j_max" => self.scattering.j_max = parse_num(value)?,
            "n_angles" => self.scattering.n_angles = parse_num(value)?,
            "n_phases" => self.scattering.n_phases = parse_num(value)?,
            "n_colors" => self.scattering.n_colors = parse_num(value)?,
            "height" => self.scattering.height = parse_num(value)?,
            "width" => self.scattering.width = parse_num(value)?,
            "images" => self.images = parse_list(value, |v| Ok(PathBuf::from(v)))?,
            "synthetic_images" => self.synthetic_images = parse_num(value)?,
            "reduce_dims" => self.reduce_dims = opt(value, parse_num)?,
            "epochs" => self.train.epochs = parse_num(value)?,
            "learning_rate" => self.train.learning_rate = parse_num(value)?,
            "lr_milestones" => self.train.lr_milestones = parse_list(value, parse_num)?,
            "lr_decay" => self.train.lr_decay = parse_num(value)?,
            "batch_size" => self.train.batch_size = parse_num(value)?,
            "clip_norm" => self.train.clip_norm = opt(value, parse_num)?,
            "tied" => self.tied = parse_bool(value)?,
            "n_layers" => self.n_layers = parse_num(value)?,
            "lambda_star_init" => self.lambda_star_init = parse_num(value)?,
            "dataset_signal_dim" => self.dataset_signal_dim = parse_num(value)?,
            "dataset_atom_count" => self.dataset_atom_count = parse_num(value)?,
            "dataset_support" => self.dataset_support = parse_num(value)?,
            "train_size" => self.train_size = parse_num(value)?,
            "validation_size" => self.validation_size = parse_num(value)?,
            "dataset_noise" => self.dataset_noise = parse_num(value)?,
            "shuffle_labels" => self.shuffle_labels = parse_bool(value)?,
            "resume" => self.resume = opt(value, |v| Ok(PathBuf::from(v)))?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Resolved config in [`CONFIG_KEYS`] order, without `out`.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS.iter().filter(|k| **k != "out") {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    fn value_of(&self, key: &str) -> String {
        fn o<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(ToString::to_string).unwrap_or_default()
        }
        fn join<T>(v: &[T], f: impl Fn(&T) -> String) -> String {
            v.iter().map(f).collect::<Vec<_>>().join(",")
        }
        let f = |v: f64| fmt_f64(v);
        match key {
            "experiment" => self.kind.name().into(),
            "seed" => o(&self.seed),
            "out" => self.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "signal_dim" => self.signal_dim.to_string(),
            "atom_count" => self.atom_count.to_string(),
            "support_size" => self.support_size.to_string(),
            "noise" => f(self.noise),
            "coef_low" => f(self.coefficient_range.0),
            "coef_high" => f(self.coefficient_range.1),
            "certified" => self.certified.to_string(),
            "instances" => self.instances.to_string(),
            "lambda_fraction" => f(self.lambda_fraction),
            "n_iterations" => self.n_iterations.to_string(),
            "step_size" => self.step_size.map(f).unwrap_or_default(),
            "solvers" => join(&self.solvers, |s| s.name().into()),
            "max_support" => o(&self.max_support),
            "adversarial_strength" => self.adversarial_strength.map(f).unwrap_or_default(),
            "adversarial_min_coherence" => f(self.adversarial_min_coherence),
            "gamma_fraction" => f(self.gamma_fraction),
            "oracle_tolerance" => f(self.oracle_tolerance),
            "j_max" => self.scattering.j_max.to_string(),
            "n_angles" => self.scattering.n_angles.to_string(),
            "n_phases" => self.scattering.n_phases.to_string(),
            "n_colors" => self.scattering.n_colors.to_string(),
            "height" => self.scattering.height.to_string(),
            "width" => self.scattering.width.to_string(),
            "images" => join(&self.images, |p| p.display().to_string()),
            "synthetic_images" => self.synthetic_images.to_string(),
            "reduce_dims" => o(&self.reduce_dims),
            "epochs" => self.train.epochs.to_string(),
            "learning_rate" => f(self.train.learning_rate),
            "lr_milestones" => join(&self.train.lr_milestones, ToString::to_string),
            "lr_decay" => f(self.train.lr_decay),
            "batch_size" => self.train.batch_size.to_string(),
            "clip_norm" => self.train.clip_norm.map(f).unwrap_or_default(),
            "tied" => self.tied.to_string(),
            "n_layers" => self.n_layers.to_string(),
            "lambda_star_init" => f(self.lambda_star_init),
            "dataset_signal_dim" => self.dataset_signal_dim.to_string(),
            "dataset_atom_count" => self.dataset_atom_count.to_string(),
            "dataset_support" => self.dataset_support.to_string(),
            "train_size" => self.train_size.to_string(),
            "validation_size" => self.validation_size.to_string(),
            "dataset_noise" => f(self.dataset_noise),
            "shuffle_labels" => self.shuffle_labels.to_string(),
            "resume" => self.resume.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            _ => String::new(),
        }
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(format!("{} needs a seed", self.kind.name())))
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory given".into()))
    }

    pub fn problem_spec(&self, seed: u64) -> ProblemSpec {
        ProblemSpec::new(self.signal_dim, self.atom_count, self.support_size, seed)
            .noise(self.noise)
            .coefficients(self.coefficient_range.0, self.coefficient_range.1)
            .certified(self.certified)
    }

    /// Seed of instance `index`.
    pub fn instance_seed(&self, index: usize) -> Result<u64> {
        Ok(self.require_seed()?.wrapping_add(index as u64))
    }

    fn oracle_support_cap(&self) -> usize {
        self.max_support
            .unwrap_or(self.support_size + 3)
            .min(self.atom_count)
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse {v:?}")))
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("expected a boolean, got {v:?}"))),
    }
}

fn opt<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Option<T>> {
    if v.is_empty() {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = cfg.require_out()?.to_path_buf();
    fs::create_dir_all(&out)?;
    fs::write(
        out.join("manifest.txt"),
        format!("tool = {TOOL_VERSION}\n{}", cfg.to_kv()),
    )?;
    Ok(out)
}

fn write_trace(path: &Path, trace: &ConvergenceTrace) -> Result<()> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// One planted instance of an ensemble with its target `lambda_star`.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub seed: u64,
    pub instance: PlantedInstance,
    pub lambda_star: f64,
}

/// Generates the planted ensemble described by `cfg`, replacing `W` by an
/// adversarial matrix when `adversarial_strength` is set.
pub fn build_ensemble(cfg: &ExperimentConfig) -> Result<Vec<EnsembleMember>> {
    cfg.require_seed()?;
    (0..cfg.instances)
        .into_par_iter()
        .map(|i| build_member(cfg, i).map_err(|e| Error::Problem { index: i, source: Box::new(e) }))
        .collect()
}

fn build_member(cfg: &ExperimentConfig, index: usize) -> Result<EnsembleMember> {
    let seed = cfg.instance_seed(index)?;
    let mut instance = generate_planted(&cfg.problem_spec(seed))?;
    if let Some(strength) = cfg.adversarial_strength {
        let w = adversarial_auxiliary_at_least(
            &instance.dictionary,
            strength,
            cfg.adversarial_min_coherence / instance.support_size().max(1) as f64,
            seed ^ 0xA5A5_A5A5,
            1000,
        )?;
        instance = instance.with_auxiliary(w);
    }
    let top = linf_norm(instance.dictionary.correlate(instance.signal.values()).view());
    Ok(EnsembleMember {
        seed,
        lambda_star: cfg.lambda_fraction * top,
        instance,
    })
}

/// Exact solution, retrying with every support size when the default cap is
/// too small.
pub fn oracle_solution(member: &EnsembleMember, cap: usize) -> Result<SparseCode> {
    let inst = &member.instance;
    match exact_positive_lasso(&inst.dictionary, &inst.signal, member.lambda_star, cap) {
        Err(Error::NoKktPoint(_)) if cap < inst.dictionary.atom_count() => exact_positive_lasso(
            &inst.dictionary,
            &inst.signal,
            member.lambda_star,
            inst.dictionary.atom_count(),
        ),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub instance: usize,
    pub solver: SolverKind,
    pub iterations: usize,
    pub lambda_star: f64,
    pub oracle_lagrangian: f64,
    pub final_lagrangian: f64,
    /// Measured at iteration `min(12, iterations)`.
    pub linf_at_12: f64,
    pub rel_mse_at_12: Option<f64>,
    pub linf_final: f64,
    pub rel_mse_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub rows: Vec<BenchmarkRow>,
    pub traces: Vec<(usize, SolverKind, ConvergenceTrace)>,
}

impl BenchmarkOutcome {
    fn column(&self, solver: SolverKind, f: impl Fn(&BenchmarkRow) -> Option<f64>) -> Vec<f64> {
        self.rows.iter().filter(|r| r.solver == solver).filter_map(f).collect()
    }

    pub fn median_rel_mse_at_12(&self, solver: SolverKind) -> Option<f64> {
        median(&mut self.column(solver, |r| r.rel_mse_at_12))
    }

    pub fn median_final_lagrangian(&self, solver: SolverKind) -> Option<f64> {
        median(&mut self.column(solver, |r| Some(r.final_lagrangian)))
    }

    pub fn median_linf_at_12(&self, solver: SolverKind) -> Option<f64> {
        median(&mut self.column(solver, |r| Some(r.linf_at_12)))
    }

    pub fn trace(&self, instance: usize, solver: SolverKind) -> Option<&ConvergenceTrace> {
        self.traces
            .iter()
            .find(|(i, s, _)| *i == instance && *s == solver)
            .map(|(_, _, t)| t)
    }
}

/// Runs each configured solver on every instance and compares against the
/// exact solution. Writes `traces/instance_XXX_<solver>.csv`,
/// `instances/instance_XXX.{bin,txt}`, `summary.csv` and `medians.csv`.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkOutcome> {
    cfg.require_seed()?;
    let out = prepare_out(cfg)?;
    let members = build_ensemble(cfg)?;
    let cap = cfg.oracle_support_cap();
    let solver_cfg = SolverConfig {
        step_size: cfg.step_size,
        n_iterations: cfg.n_iterations,
        record_trace: true,
    };
    let per_instance: Vec<Vec<(BenchmarkRow, ConvergenceTrace)>> = members
        .par_iter()
        .enumerate()
        .map(|(i, member)| {
            let wrap = |e| Error::Problem { index: i, source: Box::new(e) };
            let oracle = oracle_solution(member, cap).map_err(wrap)?;
            let inst = &member.instance;
            let oracle_lagrangian = lagrangian(&inst.dictionary, &inst.signal, &oracle, member.lambda_star);
            let problem = Problem {
                dictionary: inst.dictionary.clone(),
                auxiliary: Some(inst.auxiliary.clone()),
                signal: inst.signal.clone(),
                lambda_star: member.lambda_star,
            };
            cfg.solvers
                .iter()
                .map(|&kind| {
                    let (code, mut trace) = solve(&problem, kind, &solver_cfg).map_err(wrap)?;
                    trace.attach_reference(oracle.values());
                    let at = cfg.n_iterations.min(12).min(trace.len() - 1);
                    let early = &trace.records[at].code;
                    let row = BenchmarkRow {
                        instance: i,
                        solver: kind,
                        iterations: cfg.n_iterations,
                        lambda_star: member.lambda_star,
                        oracle_lagrangian,
                        final_lagrangian: trace.records.last().map(|r| r.lagrangian).unwrap_or(f64::NAN),
                        linf_at_12: linf_distance(early.view(), oracle.values()),
                        rel_mse_at_12: relative_mse(oracle.values(), early.view()).ok(),
                        linf_final: linf_distance(code.values(), oracle.values()),
                        rel_mse_final: relative_mse(oracle.values(), code.values()).ok(),
                    };
                    Ok((row, trace))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    fs::create_dir_all(out.join("traces"))?;
    fs::create_dir_all(out.join("instances"))?;
    let mut summary = String::from(
        "instance,solver,iterations,lambda_star,oracle_lagrangian,final_lagrangian,linf_at_12,rel_mse_at_12,linf_final,rel_mse_final\n",
    );
    let mut outcome = BenchmarkOutcome {
        rows: Vec::new(),
        traces: Vec::new(),
    };
    for (i, (member, results)) in members.iter().zip(per_instance).enumerate() {
        let stem = format!("instance_{i:03}");
        save_matrix(&out.join("instances").join(format!("{stem}_dictionary.bin")), &member.instance.dictionary.atoms().to_owned())?;
        save_matrix(
            &out.join("instances").join(format!("{stem}_signal.bin")),
            &member.instance.signal.values().to_owned().insert_axis(ndarray::Axis(1)),
        )?;
        fs::write(
            out.join("instances").join(format!("{stem}.txt")),
            cfg.problem_spec(member.seed).to_sidecar(Some(member.lambda_star)),
        )?;
        for (row, trace) in results {
            write_trace(&out.join("traces").join(format!("{stem}_{}.csv", row.solver.name())), &trace)?;
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{},{},{},{},{}",
                row.instance,
                row.solver.name(),
                row.iterations,
                fmt_f64(row.lambda_star),
                fmt_f64(row.oracle_lagrangian),
                fmt_f64(row.final_lagrangian),
                fmt_f64(row.linf_at_12),
                opt_f64(row.rel_mse_at_12),
                fmt_f64(row.linf_final),
                opt_f64(row.rel_mse_final),
            );
            outcome.traces.push((row.instance, row.solver, trace));
            outcome.rows.push(row);
        }
    }
    fs::write(out.join("summary.csv"), summary)?;
    let mut medians = String::from("solver,median_rel_mse_at_12,median_linf_at_12,median_final_lagrangian\n");
    for &kind in &cfg.solvers {
        let _ = writeln!(
            medians,
            "{},{},{},{}",
            kind.name(),
            opt_f64(outcome.median_rel_mse_at_12(kind)),
            opt_f64(outcome.median_linf_at_12(kind)),
            opt_f64(outcome.median_final_lagrangian(kind)),
        );
    }
    fs::write(out.join("medians.csv"), medians)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyRow {
    pub instance: usize,
    pub seed: u64,
    /// `None` when the instance could not be generated.
    pub certificate: Option<Certificate>,
    pub schedule: Option<ThresholdSchedule>,
    pub verification: Option<VerificationReport>,
    pub error: Option<String>,
}

impl CertifyRow {
    /// Hypotheses hold and the schedule respects the floor.
    pub fn certified(&self) -> bool {
        self.verification.as_ref().is_some_and(|v| v.guaranteed)
    }

    pub fn passed(&self) -> bool {
        self.verification.as_ref().is_some_and(|v| v.passed())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOutcome {
    pub rows: Vec<CertifyRow>,
}

impl CertifyOutcome {
    /// 0: every instance certified and verified; 2: some certified instance
    /// violated the guarantee; 1: otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.rows.iter().any(|r| r.certified() && !r.passed()) {
            2
        } else if !self.rows.is_empty() && self.rows.iter().all(|r| r.certified() && r.passed()) {
            0
        } else {
            1
        }
    }

    pub fn certified_count(&self) -> usize {
        self.rows.iter().filter(|r| r.certified()).count()
    }

    pub fn violation_count(&self) -> usize {
        self.rows.iter().filter(|r| r.verification.is_some() && !r.passed()).count()
    }
}

/// Chooses a compliant schedule when the hypotheses allow one; otherwise a
/// plain geometric schedule to `lambda_star` so the run can still be
/// reported.
fn certify_member(
    cfg: &ExperimentConfig,
    member: &EnsembleMember,
) -> Result<(Certificate, ThresholdSchedule, ConvergenceTrace, VerificationReport)> {
    let inst = &member.instance;
    let s = inst.support_size() as f64;
    let mu = cross_coherence(&inst.auxiliary, &inst.dictionary)?;
    let correlation_max = linf_norm(inst.auxiliary.correlate(inst.signal.values()).view());
    let lambda_max = default_lambda_max(
        inst.auxiliary.correlate(inst.signal.values()).view(),
        member.lambda_star,
    );
    let n_max = cfg.n_iterations.max(1);
    let mut chosen = None;
    if s * mu < 0.5 && correlation_max > 0.0 {
        let high = 1.0 / (2.0 * s * mu);
        let gamma = 1.0 + cfg.gamma_fraction * (high - 1.0);
        let certificate = certify(inst, gamma, correlation_max)?;
        let mut n = certificate.max_layers().unwrap_or(0).min(n_max);
        while n > 0 && !certificate.respects_floor(&certificate.schedule(n)?) {
            n -= 1;
        }
        if n > 0 {
            let schedule = certificate.schedule(n)?;
            chosen = Some((certificate, schedule));
        }
    }
    let (certificate, schedule) = match chosen {
        Some(c) => c,
        None => {
            let schedule = make_schedule(lambda_max, member.lambda_star.min(lambda_max / 2.0), n_max)?;
            (certify(inst, schedule.gamma(), lambda_max)?, schedule)
        }
    };
    let (_, mut trace) = solve_generalized_istc(&inst.dictionary, &inst.auxiliary, &inst.signal, &schedule)?;
    trace.attach_reference(inst.planted_code.values());
    let report = verify_trace(inst, &trace, &certificate)?;
    Ok((certificate, schedule, trace, report))
}

/// Certifies each instance, solves it with generalized ISTC under a
/// compliant schedule and verifies the trace. Writes
/// `certificates/instance_XXX.txt`, `traces/instance_XXX.csv` and
/// `certify_summary.csv`.
pub fn run_certify(cfg: &ExperimentConfig) -> Result<CertifyOutcome> {
    cfg.require_seed()?;
    let out = prepare_out(cfg)?;
    let results: Vec<(CertifyRow, Option<ConvergenceTrace>)> = (0..cfg.instances)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.instance_seed(i)?;
            let mut row = CertifyRow {
                instance: i,
                seed,
                certificate: None,
                schedule: None,
                verification: None,
                error: None,
            };
            let attempt = build_member(cfg, i).and_then(|m| certify_member(cfg, &m));
            match attempt {
                Ok((certificate, schedule, trace, report)) => {
                    row.certificate = Some(certificate);
                    row.schedule = Some(schedule);
                    row.verification = Some(report);
                    Ok((row, Some(trace)))
                }
                Err(e @ (Error::CertificationUnreachable(_) | Error::GammaOutOfRange(_) | Error::BadRange { .. })) => {
                    row.error = Some(e.to_string());
                    Ok((row, None))
                }
                Err(e) => Err(Error::Problem { index: i, source: Box::new(e) }),
            }
        })
        .collect::<Result<_>>()?;

    fs::create_dir_all(out.join("certificates"))?;
    fs::create_dir_all(out.join("traces"))?;
    let mut summary = String::from(
        "instance,seed,s,mu_tilde,certified,gamma,lambda_max,n_layers,passed,first_violation,worst_bound_ratio,error\n",
    );
    let mut rows = Vec::with_capacity(results.len());
    for (row, trace) in results {
        let stem = format!("instance_{:03}", row.instance);
        if let (Some(c), Some(v)) = (&row.certificate, &row.verification) {
            fs::write(
                out.join("certificates").join(format!("{stem}.txt")),
                format!("{}{}", c.to_report(), v.to_report()),
            )?;
        }
        if let Some(trace) = &trace {
            write_trace(&out.join("traces").join(format!("{stem}.csv")), trace)?;
        }
        let c = row.certificate.as_ref();
        let v = row.verification.as_ref();
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.instance,
            row.seed,
            c.map(|c| c.s.to_string()).unwrap_or_default(),
            opt_f64(c.map(|c| c.mu_tilde)),
            row.certified(),
            opt_f64(c.map(|c| c.gamma)),
            opt_f64(c.map(|c| c.lambda_max)),
            row.schedule.as_ref().map(|s| s.n_layers().to_string()).unwrap_or_default(),
            row.passed(),
            v.and_then(|v| v.first_violation()).map(|n| n.to_string()).unwrap_or_default(),
            opt_f64(v.map(|v| v.worst_bound_ratio)),
            row.error.clone().unwrap_or_default().replace(',', ";"),
        );
        rows.push(row);
    }
    fs::write(out.join("certify_summary.csv"), summary)?;
    Ok(CertifyOutcome { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterOutcome {
    pub outputs: Vec<ScatteringOutput>,
    pub reduction: Option<ReductionOperator>,
    pub reduced: Vec<Array3<f64>>,
    /// Reduced position vectors centered and scaled to unit norm, ready for
    /// sparse coding.
    pub standardized: Vec<Array3<f64>>,
}

/// Scatters the configured images (files, or seeded synthetic ones) and
/// optionally fits and applies a PCA reduction. Writes `channels.csv`,
/// `scatter/image_XXX.ssimg` and, with reduction, `reduction.bin`,
/// `reduction_mean.bin`, `reduction_eigenvalues.csv`,
/// `reduced/image_XXX.ssimg` and `standardized/image_XXX.ssimg`.
pub fn run_scatter(cfg: &ExperimentConfig) -> Result<ScatterOutcome> {
    let config = cfg.scattering;
    config.validate()?;
    let images: Vec<Array3<f64>> = if cfg.images.is_empty() {
        let seed = cfg.require_seed()?;
        (0..cfg.synthetic_images)
            .map(|i| synthetic_image(config.n_colors, config.height, config.width, seed.wrapping_add(i as u64)))
            .collect()
    } else {
        cfg.images.iter().map(|p| load_image(p)).collect::<Result<_>>()?
    };
    let expected = (config.n_colors, config.height, config.width);
    if let Some(bad) = images.iter().find(|im| im.dim() != expected) {
        return Err(Error::shape(format!("{expected:?}"), format!("{:?}", bad.dim())));
    }
    let out = prepare_out(cfg)?;
    let bank = build_morlet_bank(&config)?;
    let outputs: Vec<ScatteringOutput> = images.par_iter().map(|im| scatter(im, &bank)).collect::<Result<_>>()?;
    fs::write(out.join("channels.csv"), channel_manifest(&config))?;
    fs::create_dir_all(out.join("scatter"))?;
    for (i, o) in outputs.iter().enumerate() {
        save_tensor(&out.join("scatter").join(format!("image_{i:03}.ssimg")), &o.tensor)?;
    }
    let mut outcome = ScatterOutcome {
        outputs,
        reduction: None,
        reduced: Vec::new(),
        standardized: Vec::new(),
    };
    if let Some(k) = cfg.reduce_dims {
        let op = fit_reduction(&outcome.outputs, k)?;
        save_matrix(&out.join("reduction.bin"), &op.projection)?;
        save_matrix(&out.join("reduction_mean.bin"), &op.mean.clone().insert_axis(ndarray::Axis(1)))?;
        let mut eig = String::from("index,eigenvalue\n");
        for (i, v) in op.eigenvalues.iter().enumerate() {
            let _ = writeln!(eig, "{i},{}", fmt_f64(*v));
        }
        fs::write(out.join("reduction_eigenvalues.csv"), eig)?;
        fs::create_dir_all(out.join("reduced"))?;
        for (i, o) in outcome.outputs.iter().enumerate() {
            let reduced = apply_reduction(&op, o)?;
            save_tensor(&out.join("reduced").join(format!("image_{i:03}.ssimg")), &reduced)?;
            outcome.reduced.push(reduced);
        }
        let rows: Vec<Array2<f64>> = outcome.reduced.iter().map(position_rows).collect();
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let all = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Format(e.to_string()))?;
        let standardizer = Standardizer::fit(&all)?;
        fs::create_dir_all(out.join("standardized"))?;
        for (i, (r, rows)) in outcome.reduced.iter().zip(&rows).enumerate() {
            let (h, w, c) = r.dim();
            let tensor = standardizer
                .apply(rows)?
                .into_shape_with_order((h, w, c))
                .expect("contiguous");
            save_tensor(&out.join("standardized").join(format!("image_{i:03}.ssimg")), &tensor)?;
            outcome.standardized.push(tensor);
        }
        outcome.reduction = Some(op);
    }
    Ok(outcome)
}

fn position_rows(t: &Array3<f64>) -> Array2<f64> {
    let (h, w, c) = t.dim();
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order((h * w, c))
        .expect("contiguous")
}

/// Writes `dictionary.bin`, `auxiliary.bin` (untied only),
/// `classifier_weights.bin`, `classifier_bias.bin` and `meta.txt`.
pub fn save_checkpoint(dir: &Path, state: &TrainState, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_matrix(&dir.join("dictionary.bin"), &state.params.dictionary)?;
    let aux = dir.join("auxiliary.bin");
    match &state.params.auxiliary {
        Some(w) => save_matrix(&aux, w)?,
        None if aux.exists() => fs::remove_file(&aux)?,
        None => {}
    }
    save_matrix(&dir.join("classifier_weights.bin"), &state.classifier.weights)?;
    save_matrix(
        &dir.join("classifier_bias.bin"),
        &state.classifier.bias.clone().insert_axis(ndarray::Axis(1)),
    )?;
    let lambda_max = match state.params.lambda_max {
        LambdaMaxPolicy::DataDependent => "data-dependent".to_string(),
        LambdaMaxPolicy::Fixed(v) => fmt_f64(v),
    };
    let meta = format!(
        "log_lambda_star = {}\nlambda_star = {}\nlambda_max = {lambda_max}\nn_layers = {}\nepoch = {}\nseed = {seed}\ntied = {}\n",
        fmt_f64(state.params.log_lambda_star),
        fmt_f64(state.params.lambda_star()),
        state.params.n_layers,
        state.epoch,
        state.params.is_tied(),
    );
    fs::write(dir.join("meta.txt"), meta)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainState> {
    let meta = fs::read_to_string(dir.join("meta.txt"))?;
    let fields: BTreeMap<&str, &str> = meta
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("checkpoint meta lacks {k}")))
    };
    let tied = parse_bool(get("tied")?)?;
    let lambda_max = match get("lambda_max")? {
        "data-dependent" => LambdaMaxPolicy::DataDependent,
        v => LambdaMaxPolicy::Fixed(parse_num(v)?),
    };
    let params = UnrolledParams {
        dictionary: load_matrix(&dir.join("dictionary.bin"))?,
        auxiliary: if tied {
            None
        } else {
            Some(load_matrix(&dir.join("auxiliary.bin"))?)
        },
        log_lambda_star: parse_num(get("log_lambda_star")?)?,
        lambda_max,
        n_layers: parse_num(get("n_layers")?)?,
    };
    let bias = load_matrix(&dir.join("classifier_bias.bin"))?;
    let classifier = ToyClassifier {
        weights: load_matrix(&dir.join("classifier_weights.bin"))?,
        bias: bias.column(0).to_owned(),
    };
    if classifier.weights.ncols() != params.atom_count() || classifier.weights.nrows() != classifier.bias.len() {
        return Err(Error::Format("checkpoint classifier does not match dictionary".into()));
    }
    Ok(TrainState {
        params,
        classifier,
        epoch: parse_num(get("epoch")?)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<EpochMetrics>,
    pub dataset: ToyDataset,
}

pub fn toy_dataset(cfg: &ExperimentConfig) -> Result<ToyDataset> {
    let seed = cfg.require_seed()?;
    let data = ToyDataset::two_class(
        cfg.dataset_signal_dim,
        cfg.dataset_atom_count,
        cfg.dataset_support,
        cfg.train_size,
        cfg.validation_size,
        cfg.dataset_noise,
        seed,
    )?;
    Ok(if cfg.shuffle_labels {
        data.shuffled_labels(seed ^ 0x5EED_5EED)
    } else {
        data
    })
}

pub fn initial_state(cfg: &ExperimentConfig) -> Result<TrainState> {
    let seed = cfg.require_seed()?;
    Ok(TrainState {
        params: UnrolledParams::random(
            cfg.dataset_signal_dim,
            cfg.dataset_atom_count,
            cfg.n_layers,
            cfg.lambda_star_init,
            cfg.tied,
            seed.wrapping_add(1),
        ),
        classifier: ToyClassifier::random(2, cfg.dataset_atom_count, seed.wrapping_add(2)),
        epoch: 0,
    })
}

/// Trains the toy model for epochs `state.epoch + 1 ..= epochs`, saving
/// `checkpoint/` after every epoch and `metrics.csv`
/// (`epoch,train_loss,val_acc,mean_sparsity`). A diverged run keeps the last
/// good checkpoint and the metrics written so far.
pub fn run_train_toy(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let seed = cfg.require_seed()?;
    let out = prepare_out(cfg)?;
    let dataset = toy_dataset(cfg)?;
    let mut state = match &cfg.resume {
        Some(dir) => load_checkpoint(dir)?,
        None => initial_state(cfg)?,
    };
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let checkpoint = out.join("checkpoint");
    save_checkpoint(&checkpoint, &state, seed)?;
    let mut csv = String::from("epoch,train_loss,val_acc,mean_sparsity\n");
    let mut metrics = Vec::new();
    while state.epoch < train.epochs {
        let mut next = state.clone();
        match train_epoch(&mut next, &dataset, &train) {
            Ok(m) => {
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    m.epoch,
                    fmt_f64(m.train_loss),
                    fmt_f64(m.validation_accuracy),
                    fmt_f64(m.mean_sparsity)
                );
                metrics.push(m);
                state = next;
                save_checkpoint(&checkpoint, &state, seed)?;
                fs::write(out.join("metrics.csv"), &csv)?;
            }
            Err(e) => {
                fs::write(out.join("metrics.csv"), &csv)?;
                return Err(e);
            }
        }
    }
    fs::write(out.join("metrics.csv"), &csv)?;
    Ok(TrainOutcome {
        state,
        metrics,
        dataset,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub instance: usize,
    pub lambda_star: f64,
    pub oracle: SparseCode,
    pub kkt_ok: bool,
    pub istc_linf: f64,
    pub oracle_lagrangian: f64,
    pub istc_lagrangian: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub rows: Vec<OracleRow>,
    pub tolerance: f64,
}

impl OracleOutcome {
    /// 0 when every oracle output passes KKT and ISTC lands within the
    /// tolerance, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.rows.iter().all(|r| r.kkt_ok && r.istc_linf <= self.tolerance) {
            0
        } else {
            2
        }
    }
}

/// Solves every instance exactly, checks KKT at `1e-9` and measures how
/// close ISTC with `n_iterations` layers gets. Writes `oracle_check.csv`.
pub fn run_oracle_check(cfg: &ExperimentConfig) -> Result<OracleOutcome> {
    cfg.require_seed()?;
    let out = prepare_out(cfg)?;
    let members = build_ensemble(cfg)?;
    let cap = cfg.oracle_support_cap();
    let rows: Vec<OracleRow> = members
        .par_iter()
        .enumerate()
        .map(|(i, member)| {
            let inst = &member.instance;
            let result = (|| {
                let oracle = oracle_solution(member, cap)?;
                let kkt_ok = kkt_check(&inst.dictionary, &inst.signal, &oracle, member.lambda_star, KKT_TOL);
                let problem = Problem {
                    dictionary: inst.dictionary.clone(),
                    auxiliary: None,
                    signal: inst.signal.clone(),
                    lambda_star: member.lambda_star,
                };
                let (code, _) = solve(&problem, SolverKind::Istc, &SolverConfig::new(cfg.n_iterations))?;
                Ok(OracleRow {
                    instance: i,
                    lambda_star: member.lambda_star,
                    kkt_ok,
                    istc_linf: linf_distance(code.values(), oracle.values()),
                    oracle_lagrangian: lagrangian(&inst.dictionary, &inst.signal, &oracle, member.lambda_star),
                    istc_lagrangian: lagrangian(&inst.dictionary, &inst.signal, &code, member.lambda_star),
                    oracle,
                })
            })();
            result.map_err(|e| Error::Problem { index: i, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from(
        "instance,lambda_star,oracle_support_size,kkt_ok,istc_layers,istc_linf,oracle_lagrangian,istc_lagrangian\n",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.instance,
            fmt_f64(r.lambda_star),
            r.oracle.support().len(),
            r.kkt_ok,
            cfg.n_iterations,
            fmt_f64(r.istc_linf),
            fmt_f64(r.oracle_lagrangian),
            fmt_f64(r.istc_lagrangian),
        );
    }
    fs::write(out.join("oracle_check.csv"), csv)?;
    Ok(OracleOutcome {
        rows,
        tolerance: cfg.oracle_tolerance,
    })
}

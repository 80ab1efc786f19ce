//! Positive l1 sparse coding by homotopy iterated soft thresholding (ISTC).
//!
//! The crate is organized by concern:
//!
//! - [`dictionary`]: dictionaries, signals, positive codes, coherence and the
//!   l1 Lagrangian.
//! - [`prox`]: the positive proximal operator and the ISTA, FISTA, ISTC and
//!   generalized ISTC solvers.
//! - [`certify`]: hypothesis checks and trace verification for the
//!   exponential convergence guarantee.
//! - [`oracle`]: planted instances, exact positive lasso by enumeration, KKT.
//! - [`scattering`]: Morlet filter bank, 2D scattering and PCA reduction.
//! - [`unrolled`]: the ISTC network with exact reverse-mode gradients and a
//!   toy task-driven trainer.
//! - [`harness`]: seeded experiments behind the `istc` command line tool.

pub mod certify;
pub mod dictionary;
pub mod error;
pub mod io;
pub mod oracle;
pub mod prox;
pub mod scattering;
pub mod harness;
pub mod unrolled;

pub use certify::{certify, error_bound, verify_trace, Certificate, PlantedInstance};
pub use dictionary::{
    cross_coherence, lagrangian, mutual_coherence, normalize_columns, relative_mse, spectral_norm_sq,
    AuxiliaryMatrix, Dictionary, Signal, SparseCode,
};
pub use error::{Error, Result};
pub use oracle::{exact_positive_lasso, generate_planted, kkt_check, ProblemSpec};
pub use prox::{
    batch_solve, make_schedule, positive_prox, solve_fista, solve_generalized_istc, solve_ista, solve_istc,
    ConvergenceTrace, SolverConfig, SolverKind, ThresholdSchedule,
};

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} has zero norm")]
    ZeroColumn(usize),
    #[error("auxiliary column {0} is orthogonal to its dictionary atom")]
    DegeneratePairing(usize),
    #[error("coherence needs at least two atoms")]
    SingleAtom,
    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("negative coefficient {value} at index {index}")]
    NegativeCoefficient { index: usize, value: f64 },
    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("reference vector has zero norm")]
    ZeroReference,
    #[error("step size {step} must lie in (0, {bound})")]
    StepTooLarge { step: f64, bound: f64 },
    #[error("invalid threshold range: lambda_max = {lambda_max}, lambda_star = {lambda_star}, layers = {n_layers}")]
    BadRange {
        lambda_max: f64,
        lambda_star: f64,
        n_layers: usize,
    },
    #[error("gamma must exceed 1, got {0}")]
    GammaOutOfRange(f64),
    #[error("trace does not match the certificate schedule: {0}")]
    ScheduleMismatch(String),
    #[error("no instance met the coherence target after {0} draws")]
    CertificationUnreachable(usize),
    #[error("exact solver supports at most {max} atoms, got {found}")]
    TooManyAtoms { max: usize, found: usize },
    #[error("no KKT point with support size <= {0}")]
    NoKktPoint(usize),
    #[error("need at least {needed} sample vectors, got {found}")]
    InsufficientSamples { needed: usize, found: usize },
    #[error("forward cache does not match parameters: {0}")]
    CacheMismatch(String),
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("problem {index}")]
    Problem {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

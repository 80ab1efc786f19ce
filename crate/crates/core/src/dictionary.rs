//! Dictionaries, signals and positive sparse codes, plus the coherence,
//! norm and objective computations shared by every solver.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Column norms below this are treated as zero.
const ZERO_NORM: f64 = 1e-300;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

/// A dense `P x M` matrix whose columns (atoms) have unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Array2<f64>,
}

impl Dictionary {
    /// Wraps a matrix whose columns are already unit norm (within `1e-12`).
    pub fn from_unit_columns(atoms: Array2<f64>) -> Result<Self> {
        check_finite(&atoms, "dictionary")?;
        check_nonempty(&atoms)?;
        for (m, col) in atoms.axis_iter(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::Format(format!(
                    "atom {m} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { atoms })
    }

    pub fn signal_dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn atom(&self, m: usize) -> ArrayView1<'_, f64> {
        self.atoms.column(m)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.atoms
    }

    /// `D alpha`
    pub fn synthesize(&self, code: ArrayView1<f64>) -> Array1<f64> {
        self.atoms.dot(&code)
    }

    /// `D^t v`
    pub fn correlate(&self, v: ArrayView1<f64>) -> Array1<f64> {
        self.atoms.t().dot(&v)
    }

    pub fn gram(&self) -> Array2<f64> {
        self.atoms.t().dot(&self.atoms)
    }
}

/// Normalizes every column to unit Euclidean norm.
pub fn normalize_columns(raw: &Array2<f64>) -> Result<Dictionary> {
    check_finite(raw, "dictionary")?;
    check_nonempty(raw)?;
    let mut atoms = raw.clone();
    for (m, mut col) in atoms.axis_iter_mut(Axis(1)).enumerate() {
        let norm = col.dot(&col).sqrt();
        if norm < ZERO_NORM {
            return Err(Error::ZeroColumn(m));
        }
        col.mapv_inplace(|v| v / norm);
    }
    Ok(Dictionary { atoms })
}

/// The auxiliary matrix `W` of generalized ISTC. Each column is scaled so
/// that `W_m^t D_m = 1` for its paired dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryMatrix {
    atoms: Array2<f64>,
}

impl AuxiliaryMatrix {
    /// Scales each column of `raw` by `1 / (W_m^t D_m)`.
    pub fn paired(raw: &Array2<f64>, dictionary: &Dictionary) -> Result<Self> {
        if raw.dim() != dictionary.atoms.dim() {
            return Err(Error::shape(
                format!("{:?}", dictionary.atoms.dim()),
                format!("{:?}", raw.dim()),
            ));
        }
        check_finite(raw, "auxiliary matrix")?;
        let mut atoms = raw.clone();
        for (m, mut col) in atoms.axis_iter_mut(Axis(1)).enumerate() {
            let pairing = col.dot(&dictionary.atom(m));
            if pairing.abs() < ZERO_NORM {
                return Err(Error::DegeneratePairing(m));
            }
            col.mapv_inplace(|v| v / pairing);
        }
        Ok(Self { atoms })
    }

    /// `W = D`.
    pub fn tied(dictionary: &Dictionary) -> Self {
        Self {
            atoms: dictionary.atoms.clone(),
        }
    }

    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn atom(&self, m: usize) -> ArrayView1<'_, f64> {
        self.atoms.column(m)
    }

    /// `W^t v`
    pub fn correlate(&self, v: ArrayView1<f64>) -> Array1<f64> {
        self.atoms.t().dot(&v)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.atoms
    }
}

/// An input vector `beta` to be sparse coded.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    values: Array1<f64>,
}

impl Signal {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal"));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: Array1::zeros(dim),
        }
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.values
    }
}

/// A nonnegative code together with its support `{m : alpha(m) > 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    values: Array1<f64>,
    support: Vec<usize>,
}

impl SparseCode {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite("sparse code"));
            }
            if value < 0.0 {
                return Err(Error::NegativeCoefficient { index, value });
            }
        }
        Ok(Self::from_nonnegative(values))
    }

    /// Caller guarantees `values >= 0` (e.g. the output of a ReLU). NaN
    /// entries are kept out of the support.
    pub(crate) fn from_nonnegative(values: Array1<f64>) -> Self {
        debug_assert!(values.iter().all(|v| !(*v < 0.0)));
        let support = support_of(values.view());
        Self { values, support }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: Array1::zeros(dim),
            support: Vec::new(),
        }
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.sum()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.values
    }
}

/// Sorted indices of strictly positive entries.
pub fn support_of(values: ArrayView1<f64>) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(m, _)| m)
        .collect()
}

/// `max_{m != m'} |D_m^t D_m'|`.
pub fn mutual_coherence(dictionary: &Dictionary) -> Result<f64> {
    if dictionary.atom_count() < 2 {
        return Err(Error::SingleAtom);
    }
    Ok(off_diagonal_max(&dictionary.gram()))
}

/// `max_{m != m'} |W_m'^t D_m|`.
pub fn cross_coherence(auxiliary: &AuxiliaryMatrix, dictionary: &Dictionary) -> Result<f64> {
    if auxiliary.atoms.dim() != dictionary.atoms.dim() {
        return Err(Error::shape(
            format!("{:?}", dictionary.atoms.dim()),
            format!("{:?}", auxiliary.atoms.dim()),
        ));
    }
    if dictionary.atom_count() < 2 {
        return Err(Error::SingleAtom);
    }
    Ok(off_diagonal_max(&auxiliary.atoms.t().dot(&dictionary.atoms)))
}

fn off_diagonal_max(products: &Array2<f64>) -> f64 {
    let mut max = 0.0f64;
    for ((i, j), v) in products.indexed_iter() {
        if i != j {
            max = max.max(v.abs());
        }
    }
    max
}

/// `||D^t D||_{2,2}` by power iteration on the Gram matrix.
///
/// Starts from the all-ones vector; if the iterate collapses (start vector
/// orthogonal to every dominant direction), restarts once from a fixed
/// pseudo-random vector.
pub fn spectral_norm_sq(dictionary: &Dictionary) -> Result<f64> {
    let gram = dictionary.gram();
    let m = gram.nrows();
    match power_iteration(&gram, Array1::ones(m)) {
        Some(value) => Ok(value),
        None => {
            let restart = Array1::from_iter((0..m).map(|i| {
                // fixed LCG stream, keeps the trace reproducible
                let x = (i as u64 + 1).wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 11) as f64 / (1u64 << 53) as f64) + 0.5
            }));
            power_iteration(&gram, restart).ok_or(Error::NoConvergence(POWER_MAX_ITER))
        }
    }
}

fn power_iteration(gram: &Array2<f64>, start: Array1<f64>) -> Option<f64> {
    let mut v = start;
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut estimate = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        let w = gram.dot(&v);
        let rayleigh = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm < ZERO_NORM {
            return None;
        }
        if (rayleigh - estimate).abs() <= POWER_TOL * rayleigh.abs() {
            return Some(rayleigh);
        }
        estimate = rayleigh;
        v = w / norm;
    }
    None
}

/// `1/2 ||D alpha - beta||^2 + lambda * sum(alpha)`.
pub fn lagrangian(dictionary: &Dictionary, beta: &Signal, alpha: &SparseCode, lambda: f64) -> f64 {
    lagrangian_raw(dictionary.atoms(), beta.values(), alpha.values(), lambda)
}

pub(crate) fn lagrangian_raw(
    atoms: ArrayView2<f64>,
    beta: ArrayView1<f64>,
    alpha: ArrayView1<f64>,
    lambda: f64,
) -> f64 {
    let residual = atoms.dot(&alpha) - beta;
    0.5 * residual.dot(&residual) + lambda * alpha.sum()
}

/// `||x - y||^2 / ||x||^2`.
pub fn relative_mse(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(x.len(), y.len()));
    }
    let reference = x.dot(&x);
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    let diff = &x - &y;
    Ok(diff.dot(&diff) / reference)
}

pub fn linf_distance(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

pub fn linf_norm(x: ArrayView1<f64>) -> f64 {
    x.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

fn check_finite(m: &Array2<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_nonempty(m: &Array2<f64>) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::shape("P >= 1 and M >= 1", format!("{:?}", m.dim())));
    }
    Ok(())
}

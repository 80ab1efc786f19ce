//! Ground truth for small problems: planted instance generation, exact
//! positive lasso by support enumeration, and KKT checking.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::certify::PlantedInstance;
use crate::dictionary::{
    cross_coherence, linf_norm, mutual_coherence, normalize_columns, AuxiliaryMatrix, Dictionary, Signal, SparseCode,
};
use crate::error::{Error, Result};

pub const MAX_ENUMERATION_ATOMS: usize = 20;
const RIDGE: f64 = 1e-12;
const KKT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub signal_dim: usize,
    pub atom_count: usize,
    pub support_size: usize,
    pub noise_level: f64,
    pub coefficient_range: (f64, f64),
    pub seed: u64,
    /// Resample the dictionary until `s * mu(D) < 1/2`.
    pub certified: bool,
    pub max_draws: usize,
}

impl ProblemSpec {
    pub fn new(signal_dim: usize, atom_count: usize, support_size: usize, seed: u64) -> Self {
        Self {
            signal_dim,
            atom_count,
            support_size,
            noise_level: 0.0,
            coefficient_range: (0.5, 1.5),
            seed,
            certified: false,
            max_draws: 10_000,
        }
    }

    pub fn noise(mut self, sigma: f64) -> Self {
        self.noise_level = sigma;
        self
    }

    pub fn coefficients(mut self, low: f64, high: f64) -> Self {
        self.coefficient_range = (low, high);
        self
    }

    pub fn certified(mut self, on: bool) -> Self {
        self.certified = on;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let (low, high) = self.coefficient_range;
        let ok = self.signal_dim >= 1
            && self.atom_count >= 1
            && self.support_size >= 1
            && self.support_size <= self.signal_dim.min(self.atom_count)
            && self.noise_level >= 0.0
            && low > 0.0
            && low <= high;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid problem spec {self:?}")))
        }
    }

    /// Sidecar text for exact reproduction, `key = value` per line.
    pub fn to_sidecar(&self, lambda_star: Option<f64>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "signal_dim = {}", self.signal_dim);
        let _ = writeln!(out, "atom_count = {}", self.atom_count);
        let _ = writeln!(out, "s = {}", self.support_size);
        let _ = writeln!(out, "sigma = {:.16e}", self.noise_level);
        let _ = writeln!(out, "coefficient_low = {:.16e}", self.coefficient_range.0);
        let _ = writeln!(out, "coefficient_high = {:.16e}", self.coefficient_range.1);
        let _ = writeln!(out, "certified = {}", self.certified);
        if let Some(l) = lambda_star {
            let _ = writeln!(out, "lambda = {l:.16e}");
        }
        out
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    // drawn column by column so a given seed fixes each atom independently of P
    let mut m = Array2::zeros((rows, cols));
    for mut col in m.columns_mut() {
        for v in col.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
    m
}

/// Random unit-norm Gaussian dictionary.
pub fn gaussian_dictionary(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Dictionary> {
    normalize_columns(&gaussian_matrix(rng, rows, cols))
}

pub fn generate_planted(spec: &ProblemSpec) -> Result<PlantedInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.support_size as f64;
    let mut dictionary = gaussian_dictionary(&mut rng, spec.signal_dim, spec.atom_count)?;
    if spec.certified {
        let mut draws = 1;
        loop {
            let mu = if spec.atom_count >= 2 {
                mutual_coherence(&dictionary)?
            } else {
                0.0
            };
            if s * mu < 0.5 {
                break;
            }
            if draws >= spec.max_draws {
                return Err(Error::CertificationUnreachable(draws));
            }
            dictionary = gaussian_dictionary(&mut rng, spec.signal_dim, spec.atom_count)?;
            draws += 1;
        }
    }
    let mut code = Array1::zeros(spec.atom_count);
    let (low, high) = spec.coefficient_range;
    let mut support = sample(&mut rng, spec.atom_count, spec.support_size).into_vec();
    support.sort_unstable();
    for m in support {
        code[m] = if high > low { rng.random_range(low..=high) } else { low };
    }
    let planted_code = SparseCode::new(code)?;
    let mut beta = dictionary.synthesize(planted_code.values());
    if spec.noise_level > 0.0 {
        let noise: Array1<f64> = Array1::from_iter((0..spec.signal_dim).map(|_| rng.sample(StandardNormal)));
        let norm = noise.dot(&noise).sqrt();
        beta = beta + noise * (spec.noise_level / norm);
    }
    Ok(PlantedInstance {
        auxiliary: AuxiliaryMatrix::tied(&dictionary),
        dictionary,
        planted_code,
        signal: Signal::new(beta)?,
        residual_bound: spec.noise_level,
    })
}

/// An auxiliary matrix with large cross coherence: each column mixes its own
/// atom with a strong random component so that, after the `W_m^t D_m = 1`
/// normalization, off-diagonal products are far above 1/2.
pub fn adversarial_auxiliary(dictionary: &Dictionary, strength: f64, seed: u64) -> Result<AuxiliaryMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, m) = dictionary.atoms().dim();
    let noise = gaussian_matrix(&mut rng, p, m);
    let raw = &dictionary.atoms() + &(noise * strength);
    AuxiliaryMatrix::paired(&raw, dictionary)
}

/// Draws [`adversarial_auxiliary`] matrices from consecutive seeds until the
/// cross coherence reaches `min_cross_coherence`.
pub fn adversarial_auxiliary_at_least(
    dictionary: &Dictionary,
    strength: f64,
    min_cross_coherence: f64,
    seed: u64,
    max_draws: usize,
) -> Result<AuxiliaryMatrix> {
    for draw in 0..max_draws as u64 {
        let candidate = adversarial_auxiliary(dictionary, strength, seed.wrapping_add(draw.wrapping_mul(0x9E37_79B9)))?;
        if cross_coherence(&candidate, dictionary)? >= min_cross_coherence {
            return Ok(candidate);
        }
    }
    Err(Error::CertificationUnreachable(max_draws))
}

/// `true` iff for active `m`: `|D_m^t (D alpha - beta) + lambda| <= tol` and
/// for inactive `m`: `D_m^t (D alpha - beta) + lambda >= -tol`.
pub fn kkt_check(dictionary: &Dictionary, beta: &Signal, alpha: &SparseCode, lambda_star: f64, tol: f64) -> bool {
    let residual = &dictionary.synthesize(alpha.values()) - &beta.values();
    let gradient = dictionary.correlate(residual.view());
    alpha.values().iter().zip(gradient.iter()).all(|(&a, &g)| {
        let stationarity = g + lambda_star;
        if a > 0.0 {
            stationarity.abs() <= tol
        } else {
            stationarity >= -tol
        }
    })
}

/// Exact minimizer of `1/2 ||D a - beta||^2 + lambda sum(a)` over `a >= 0`,
/// by enumerating supports of size `<= max_support` (smallest first, then
/// lexicographic) and returning the first KKT point.
pub fn exact_positive_lasso(
    dictionary: &Dictionary,
    beta: &Signal,
    lambda_star: f64,
    max_support: usize,
) -> Result<SparseCode> {
    let m = dictionary.atom_count();
    if m > MAX_ENUMERATION_ATOMS {
        return Err(Error::TooManyAtoms {
            max: MAX_ENUMERATION_ATOMS,
            found: m,
        });
    }
    if beta.dim() != dictionary.signal_dim() {
        return Err(Error::shape(dictionary.signal_dim(), beta.dim()));
    }
    let max_support = max_support.min(m);
    let gram = dictionary.gram();
    let correlations = dictionary.correlate(beta.values());
    for size in 0..=max_support {
        let mut found = None;
        for_each_combination(m, size, |support| {
            if let Some(code) = solve_on_support(&gram, &correlations, lambda_star, support) {
                let code = SparseCode::from_nonnegative(code);
                if kkt_check(dictionary, beta, &code, lambda_star, KKT_TOL) {
                    found = Some(code);
                    return true;
                }
            }
            false
        });
        if let Some(code) = found {
            return Ok(code);
        }
    }
    Err(Error::NoKktPoint(max_support))
}

/// Solves `G_S a_S = D_S^t beta - lambda` and embeds; `None` unless every
/// entry is strictly positive.
fn solve_on_support(gram: &Array2<f64>, correlations: &Array1<f64>, lambda: f64, support: &[usize]) -> Option<Array1<f64>> {
    let k = support.len();
    let mut code = Array1::zeros(gram.nrows());
    if k == 0 {
        return Some(code);
    }
    let sub = Array2::from_shape_fn((k, k), |(i, j)| gram[[support[i], support[j]]]);
    let rhs = Array1::from_iter(support.iter().map(|&m| correlations[m] - lambda));
    let solution = solve_pivoted(&sub, &rhs).or_else(|| {
        let mut ridged = sub.clone();
        for i in 0..k {
            ridged[[i, i]] += RIDGE;
        }
        solve_pivoted(&ridged, &rhs)
    })?;
    if solution.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    for (&m, &v) in support.iter().zip(solution.iter()) {
        code[m] = v;
    }
    Some(code)
}

/// Gaussian elimination with partial pivoting; `None` on a (near) singular
/// pivot.
pub(crate) fn solve_pivoted(matrix: &Array2<f64>, rhs: &Array1<f64>) -> Option<Array1<f64>> {
    let n = rhs.len();
    let mut a = matrix.clone();
    let mut b = rhs.clone();
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[pivot, col]].abs() <= 1e-14 * scale {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap([col, j], [pivot, j]);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = a[[row, col]] / a[[col, col]];
            if factor != 0.0 {
                for j in col..n {
                    a[[row, j]] -= factor * a[[col, j]];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[[row, j]] * x[j];
        }
        x[row] = acc / a[[row, row]];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Visits `k`-subsets of `0..n` in lexicographic order until `visit`
/// returns `true`.
fn for_each_combination(n: usize, k: usize, mut visit: impl FnMut(&[usize]) -> bool) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if visit(&idx) {
            return;
        }
        let Some(i) = (0..k).rev().find(|&i| idx[i] < i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// The interval of `lambda` over which the exact solution's support equals
/// `target`, located by scanning a log grid below `||D^t beta||_inf` and
/// bisecting both edges to relative width `1e-6`. `None` if no grid point
/// recovers the target support.
pub fn recovery_window(
    dictionary: &Dictionary,
    beta: &Signal,
    target: &[usize],
    max_support: usize,
) -> Result<Option<(f64, f64)>> {
    let top = linf_norm(dictionary.correlate(beta.values()).view());
    if top <= 0.0 {
        return Ok(None);
    }
    let recovers = |lambda: f64| -> Result<bool> {
        Ok(exact_positive_lasso(dictionary, beta, lambda, max_support)?.support() == target)
    };
    let grid: Vec<f64> = (1..=60).map(|k| top * 10f64.powf(-4.0 * k as f64 / 60.0)).collect();
    let mut hit = None;
    for &lambda in &grid {
        if recovers(lambda)? {
            hit = Some(lambda);
            break;
        }
    }
    let Some(inside) = hit else {
        return Ok(None);
    };
    // upper edge: support shrinks as lambda grows toward `top`
    let (mut lo, mut hi) = (inside, top);
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if recovers(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let upper = lo;
    let (mut lo, mut hi) = (0.0, inside);
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if recovers(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some((hi, upper)))
}

//! Desk-scale 2D scattering transform.
//!
//! Filters are Morlet wavelets `psi_{j,theta}(u) = 2^{-2j} psi(2^{-j} r_{-theta} u)`
//! for `1 <= j <= J` and `theta = l pi / Theta`, with mother
//! `psi(u) = C (e^{i xi.u} - kappa) exp(-|u|^2 / (2 sigma0^2))`,
//! `xi = (3 pi / 4, 0)` and `sigma0 = 0.8`. The low-pass `phi_J` is a
//! Gaussian of width `0.8 * 2^J` with unit sum. All filters are periodized
//! on the image grid and applied by circular convolution in the Fourier
//! domain.
//!
//! Channels per color, in order:
//! - `x * phi_J`
//! - order 1: `relu(x * psi_{j,theta,a}) * phi_J` with
//!   `psi_{j,theta,a} = Re(e^{-i a} psi_{j,theta})`, `a = 2 pi k / A`
//! - order 2: `||x * psi_{j,theta}| * psi_{j',theta'}| * phi_J` for `j' > j`
//!
//! every one subsampled with stride `2^J`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const MORLET_XI: f64 = 3.0 * PI / 4.0;
pub const MORLET_SIGMA: f64 = 0.8;
/// Periods summed on each side when periodizing a filter.
const PERIODS: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScatteringConfig {
    /// Largest scale exponent `J`; the output stride is `2^J`.
    pub j_max: usize,
    pub n_angles: usize,
    pub n_phases: usize,
    pub n_colors: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ScatteringConfig {
    /// 32x32 grayscale, `J = 3`, 4 angles, 4 phases.
    fn default() -> Self {
        Self {
            j_max: 3,
            n_angles: 4,
            n_phases: 4,
            n_colors: 1,
            height: 32,
            width: 32,
        }
    }
}

impl ScatteringConfig {
    pub fn validate(&self) -> Result<()> {
        let stride = self.stride();
        if self.j_max == 0 || self.n_angles == 0 || self.n_phases == 0 || self.n_colors == 0 {
            return Err(Error::Config(format!("degenerate scattering config {self:?}")));
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(stride) || !self.width.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "image {}x{} not divisible by 2^J = {stride}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        1 << self.j_max
    }

    pub fn output_size(&self) -> (usize, usize) {
        (self.height / self.stride(), self.width / self.stride())
    }

    pub fn angle(&self, index: usize) -> f64 {
        index as f64 * PI / self.n_angles as f64
    }

    pub fn phase(&self, index: usize) -> f64 {
        2.0 * PI * index as f64 / self.n_phases as f64
    }
}

/// `n_colors * (1 + J * Theta * A + C(J, 2) * Theta^2)`
pub fn channel_count(config: &ScatteringConfig) -> usize {
    let j = config.j_max;
    let theta = config.n_angles;
    let pairs = j * j.saturating_sub(1) / 2;
    config.n_colors * (1 + j * theta * config.n_phases + pairs * theta * theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Lowpass {
        color: usize,
    },
    Order1 {
        j: usize,
        theta: usize,
        phase: usize,
        color: usize,
    },
    Order2 {
        j: usize,
        theta: usize,
        j2: usize,
        theta2: usize,
        color: usize,
    },
}

impl ChannelKind {
    pub fn describe(&self) -> String {
        match *self {
            ChannelKind::Lowpass { color } => format!("lowpass,,,,,,{color}"),
            ChannelKind::Order1 { j, theta, phase, color } => format!("order1,{j},{theta},{phase},,,{color}"),
            ChannelKind::Order2 {
                j,
                theta,
                j2,
                theta2,
                color,
            } => format!("order2,{j},{theta},,{j2},{theta2},{color}"),
        }
    }
}

/// Channel descriptors in emission order.
pub fn channel_layout(config: &ScatteringConfig) -> Vec<ChannelKind> {
    let mut out = Vec::with_capacity(channel_count(config));
    for color in 0..config.n_colors {
        out.push(ChannelKind::Lowpass { color });
        for j in 1..=config.j_max {
            for theta in 0..config.n_angles {
                for phase in 0..config.n_phases {
                    out.push(ChannelKind::Order1 { j, theta, phase, color });
                }
            }
        }
        for j in 1..=config.j_max {
            for j2 in j + 1..=config.j_max {
                for theta in 0..config.n_angles {
                    for theta2 in 0..config.n_angles {
                        out.push(ChannelKind::Order2 {
                            j,
                            theta,
                            j2,
                            theta2,
                            color,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Text manifest, one line per channel:
/// `index,kind,j,theta,phase,j2,theta2,color`.
pub fn channel_manifest(config: &ScatteringConfig) -> String {
    let mut out = String::from("index,kind,j,theta,phase,j2,theta2,color\n");
    for (i, c) in channel_layout(config).iter().enumerate() {
        let _ = writeln!(out, "{i},{}", c.describe());
    }
    out
}

/// Signed grid coordinate of index `i` on a periodic axis of length `n`.
fn centered(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Calls `f(uy, ux)` for every periodic image of grid point `(y, x)`.
fn periodize(y: usize, x: usize, h: usize, w: usize, mut f: impl FnMut(f64, f64)) {
    let (cy, cx) = (centered(y, h), centered(x, w));
    for py in -PERIODS..=PERIODS {
        for px in -PERIODS..=PERIODS {
            f(cy + (py * h as i64) as f64, cx + (px * w as i64) as f64);
        }
    }
}

/// The continuous mother wavelet with the analytic zero-mean constant.
pub fn morlet_mother(uy: f64, ux: f64) -> Complex64 {
    let sigma2 = MORLET_SIGMA * MORLET_SIGMA;
    let kappa = (-0.5 * sigma2 * MORLET_XI * MORLET_XI).exp();
    let norm = 1.0 / (2.0 * PI * sigma2);
    let envelope = (-(ux * ux + uy * uy) / (2.0 * sigma2)).exp();
    norm * envelope * (Complex64::from_polar(1.0, MORLET_XI * ux) - kappa)
}

/// `psi_{j,theta}` sampled on a periodic `height x width` grid, with
/// `kappa` fitted so that the discrete sum is zero. Indexed `[y, x]`.
pub fn morlet_filter(j: usize, theta: f64, height: usize, width: usize) -> Array2<Complex64> {
    let scale = (1u64 << j) as f64;
    let sigma = MORLET_SIGMA * scale;
    // r_{-theta} applied to u, dotted with xi, equals u dotted with r_theta xi
    let (ky, kx) = (MORLET_XI / scale * theta.sin(), MORLET_XI / scale * theta.cos());
    let amplitude = 1.0 / (2.0 * PI * MORLET_SIGMA * MORLET_SIGMA) / (scale * scale);
    let mut wave = Array2::<Complex64>::zeros((height, width));
    let mut envelope = Array2::<f64>::zeros((height, width));
    for y in 0..height {
        for x in 0..width {
            let mut wv = Complex64::new(0.0, 0.0);
            let mut ev = 0.0;
            periodize(y, x, height, width, |uy, ux| {
                let g = (-(ux * ux + uy * uy) / (2.0 * sigma * sigma)).exp();
                wv += Complex64::from_polar(g, kx * ux + ky * uy);
                ev += g;
            });
            wave[[y, x]] = wv;
            envelope[[y, x]] = ev;
        }
    }
    let kappa = wave.sum() / envelope.sum();
    let mut filter = wave;
    filter.zip_mut_with(&envelope, |w, &e| *w = (*w - kappa * e) * amplitude);
    filter
}

/// Periodized Gaussian of width `0.8 * 2^J`, normalized to unit sum.
pub fn gaussian_lowpass(j_max: usize, height: usize, width: usize) -> Array2<f64> {
    let sigma = MORLET_SIGMA * (1u64 << j_max) as f64;
    let mut phi = Array2::from_shape_fn((height, width), |(y, x)| {
        let mut acc = 0.0;
        periodize(y, x, height, width, |uy, ux| {
            acc += (-(ux * ux + uy * uy) / (2.0 * sigma * sigma)).exp();
        });
        acc
    });
    let total = phi.sum();
    phi.mapv_inplace(|v| v / total);
    phi
}

/// 2D FFT on a fixed grid.
#[derive(Clone)]
struct Fft2 {
    height: usize,
    width: usize,
    rows_fwd: Arc<dyn Fft<f64>>,
    cols_fwd: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.height, self.width)
    }
}

impl Fft2 {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            rows_fwd: planner.plan_fft_forward(width),
            cols_fwd: planner.plan_fft_forward(height),
            rows_inv: planner.plan_fft_inverse(width),
            cols_inv: planner.plan_fft_inverse(height),
        }
    }

    fn run(&self, data: &mut Array2<Complex64>, forward: bool) {
        let (rows, cols) = if forward {
            (&self.rows_fwd, &self.cols_fwd)
        } else {
            (&self.rows_inv, &self.cols_inv)
        };
        let buf = data.as_slice_mut().expect("standard layout");
        rows.process(buf);
        let mut t = data.t().as_standard_layout().into_owned();
        cols.process(t.as_slice_mut().expect("standard layout"));
        data.assign(&t.t());
    }

    fn forward(&self, mut data: Array2<Complex64>) -> Array2<Complex64> {
        self.run(&mut data, true);
        data
    }

    /// Unnormalized inverse.
    fn inverse(&self, mut data: Array2<Complex64>) -> Array2<Complex64> {
        self.run(&mut data, false);
        data
    }
}

#[derive(Debug, Clone)]
pub struct Wavelet {
    pub j: usize,
    pub theta: usize,
    pub spatial: Array2<Complex64>,
    spectrum: Array2<Complex64>,
}

/// Morlet bank and low-pass at full image resolution, with precomputed
/// spectra.
#[derive(Debug, Clone)]
pub struct WaveletBank {
    config: ScatteringConfig,
    /// Ordered by `j` then `theta`.
    pub wavelets: Vec<Wavelet>,
    pub lowpass: Array2<f64>,
    lowpass_spectrum: Array2<Complex64>,
    fft: Fft2,
    fft_small: Fft2,
}

pub fn build_morlet_bank(config: &ScatteringConfig) -> Result<WaveletBank> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let fft = Fft2::new(h, w);
    let (oh, ow) = config.output_size();
    let mut index = Vec::new();
    for j in 1..=config.j_max {
        for theta in 0..config.n_angles {
            index.push((j, theta));
        }
    }
    let wavelets = index
        .par_iter()
        .map(|&(j, theta)| {
            let spatial = morlet_filter(j, config.angle(theta), h, w);
            let spectrum = fft.forward(spatial.clone());
            Wavelet {
                j,
                theta,
                spatial,
                spectrum,
            }
        })
        .collect();
    let lowpass = gaussian_lowpass(config.j_max, h, w);
    let lowpass_spectrum = fft.forward(lowpass.mapv(|v| Complex64::new(v, 0.0)));
    Ok(WaveletBank {
        config: *config,
        wavelets,
        lowpass,
        lowpass_spectrum,
        fft,
        fft_small: Fft2::new(oh, ow),
    })
}

impl WaveletBank {
    pub fn config(&self) -> &ScatteringConfig {
        &self.config
    }

    pub fn wavelet(&self, j: usize, theta: usize) -> &Wavelet {
        &self.wavelets[(j - 1) * self.config.n_angles + theta]
    }

    /// Real phase-shifted filter `Re(e^{-i a} psi_{j,theta})`.
    pub fn phase_filter(&self, j: usize, theta: usize, phase: usize) -> Array2<f64> {
        let rot = Complex64::from_polar(1.0, -self.config.phase(phase));
        self.wavelet(j, theta).spatial.mapv(|v| (rot * v).re)
    }

    /// `(f * phi_J)(2^J u)` from the spectrum of `f`.
    fn lowpass_subsampled(&self, spectrum: &Array2<Complex64>) -> Array2<f64> {
        let (oh, ow) = self.config.output_size();
        let mut folded = Array2::<Complex64>::zeros((oh, ow));
        for ((y, x), v) in spectrum.indexed_iter() {
            folded[[y % oh, x % ow]] += v * self.lowpass_spectrum[[y, x]];
        }
        let scale = 1.0 / (self.config.height * self.config.width) as f64;
        self.fft_small.inverse(folded).mapv(|v| v.re * scale)
    }

    /// Full-resolution circular convolution with a precomputed spectrum.
    fn convolve(&self, spectrum: &Array2<Complex64>, filter: &Array2<Complex64>) -> Array2<Complex64> {
        let scale = 1.0 / (self.config.height * self.config.width) as f64;
        let mut product = spectrum * filter;
        product.mapv_inplace(|v| v * scale);
        self.fft.inverse(product)
    }

    fn spectrum_of_real(&self, image: ArrayView2<f64>) -> Array2<Complex64> {
        self.fft.forward(image.mapv(|v| Complex64::new(v, 0.0)))
    }
}

/// Scattering coefficients laid out `(H / 2^J, W / 2^J, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringOutput {
    pub tensor: Array3<f64>,
    pub channels: Vec<ChannelKind>,
}

impl ScatteringOutput {
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Per-position channel vectors as rows.
    pub fn position_vectors(&self) -> Array2<f64> {
        let (h, w, c) = self.tensor.dim();
        self.tensor
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((h * w, c))
            .expect("contiguous")
    }
}

/// Scatters a `(colors, H, W)` image.
pub fn scatter(image: &Array3<f64>, bank: &WaveletBank) -> Result<ScatteringOutput> {
    let config = bank.config;
    let expected = (config.n_colors, config.height, config.width);
    if image.dim() != expected {
        return Err(Error::shape(format!("{expected:?}"), format!("{:?}", image.dim())));
    }
    let (oh, ow) = config.output_size();
    let per_color = channel_count(&ScatteringConfig { n_colors: 1, ..config });
    let mut tensor = Array3::zeros((oh, ow, per_color * config.n_colors));
    for color in 0..config.n_colors {
        let maps = scatter_channel(image.index_axis(Axis(0), color), bank);
        for (k, map) in maps.into_iter().enumerate() {
            tensor.slice_mut(s![.., .., color * per_color + k]).assign(&map);
        }
    }
    Ok(ScatteringOutput {
        tensor,
        channels: channel_layout(&config),
    })
}

fn scatter_channel(image: ArrayView2<f64>, bank: &WaveletBank) -> Vec<Array2<f64>> {
    let config = bank.config;
    let spectrum = bank.spectrum_of_real(image);
    let mut maps = vec![bank.lowpass_subsampled(&spectrum)];
    // first layer: complex wavelet coefficients at every (j, theta)
    let first: Vec<Array2<Complex64>> = bank
        .wavelets
        .par_iter()
        .map(|wv| bank.convolve(&spectrum, &wv.spectrum))
        .collect();
    let order1: Vec<Vec<Array2<f64>>> = first
        .par_iter()
        .map(|u| {
            (0..config.n_phases)
                .map(|a| {
                    let rot = Complex64::from_polar(1.0, -config.phase(a));
                    let rectified = u.mapv(|v| Complex64::new((rot * v).re.max(0.0), 0.0));
                    clamp_nonnegative(bank.lowpass_subsampled(&bank.fft.forward(rectified)))
                })
                .collect()
        })
        .collect();
    maps.extend(order1.into_iter().flatten());
    let modulus_spectra: Vec<Array2<Complex64>> = first
        .par_iter()
        .map(|u| bank.fft.forward(u.mapv(|v| Complex64::new(v.norm(), 0.0))))
        .collect();
    let mut pairs = Vec::new();
    for j in 1..=config.j_max {
        for j2 in j + 1..=config.j_max {
            for theta in 0..config.n_angles {
                for theta2 in 0..config.n_angles {
                    pairs.push((j, theta, j2, theta2));
                }
            }
        }
    }
    let order2: Vec<Array2<f64>> = pairs
        .par_iter()
        .map(|&(j, theta, j2, theta2)| {
            let source = &modulus_spectra[(j - 1) * config.n_angles + theta];
            let v = bank.convolve(source, &bank.wavelet(j2, theta2).spectrum);
            let modulus = v.mapv(|z| Complex64::new(z.norm(), 0.0));
            clamp_nonnegative(bank.lowpass_subsampled(&bank.fft.forward(modulus)))
        })
        .collect();
    maps.extend(order2);
    maps
}

/// Averages of nonnegative maps against a positive kernel are nonnegative;
/// FFT rounding can leave values around `-1e-17`.
fn clamp_nonnegative(mut map: Array2<f64>) -> Array2<f64> {
    map.mapv_inplace(|v| v.max(0.0));
    map
}

/// PCA projection applied independently at every spatial position.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionOperator {
    /// `target_dim x C`, orthonormal rows.
    pub projection: Array2<f64>,
    pub mean: Array1<f64>,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

impl ReductionOperator {
    pub fn input_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    /// Fraction of total variance captured by the kept directions.
    pub fn captured_variance(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        if total == 0.0 {
            return 1.0;
        }
        let kept: f64 = self.eigenvalues[..self.output_dim()].iter().map(|v| v.max(0.0)).sum();
        kept / total
    }

    /// `mean + P^t y` per position.
    pub fn reconstruct(&self, reduced: &Array3<f64>) -> Result<Array3<f64>> {
        let (h, w, k) = reduced.dim();
        if k != self.output_dim() {
            return Err(Error::shape(self.output_dim(), k));
        }
        let rows = reduced
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((h * w, k))
            .expect("contiguous");
        let back = rows.dot(&self.projection) + &self.mean;
        Ok(back.into_shape_with_order((h, w, self.input_dim())).expect("contiguous"))
    }
}

pub fn fit_reduction(samples: &[ScatteringOutput], target_dim: usize) -> Result<ReductionOperator> {
    let channels = samples
        .first()
        .map(|s| s.channel_count())
        .ok_or(Error::InsufficientSamples {
            needed: target_dim.max(1),
            found: 0,
        })?;
    if target_dim == 0 || target_dim > channels {
        return Err(Error::Config(format!("target_dim {target_dim} outside 1..={channels}")));
    }
    if let Some(bad) = samples.iter().find(|s| s.channel_count() != channels) {
        return Err(Error::shape(channels, bad.channel_count()));
    }
    let rows: Vec<Array2<f64>> = samples.iter().map(|s| s.position_vectors()).collect();
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Format(e.to_string()))?;
    let n = data.nrows();
    if n < target_dim {
        return Err(Error::InsufficientSamples {
            needed: target_dim,
            found: n,
        });
    }
    let mean = data.mean_axis(Axis(0)).expect("nonempty");
    let centered = &data - &mean;
    let covariance = centered.t().dot(&centered) / n as f64;
    let (values, vectors) = symmetric_eigen_descending(&covariance);
    let projection = Array2::from_shape_fn((target_dim, channels), |(i, c)| vectors[[c, i]]);
    Ok(ReductionOperator {
        projection,
        mean,
        eigenvalues: values,
    })
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending, eigenvectors
/// as columns.
pub fn symmetric_eigen_descending(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = matrix.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (matrix[[i, j]] + matrix[[j, i]]));
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Centered projection `P (v - mean)` at every position.
pub fn apply_reduction(op: &ReductionOperator, output: &ScatteringOutput) -> Result<Array3<f64>> {
    let (h, w, c) = output.tensor.dim();
    if c != op.input_dim() {
        return Err(Error::shape(op.input_dim(), c));
    }
    let rows = output.position_vectors() - &op.mean;
    let reduced = rows.dot(&op.projection.t());
    Ok(reduced
        .into_shape_with_order((h, w, op.output_dim()))
        .expect("contiguous"))
}

/// Zero-mean, unit-norm standardization of per-position vectors before
/// sparse coding.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
}

impl Standardizer {
    /// Fits the mean over rows of `vectors`.
    pub fn fit(vectors: &Array2<f64>) -> Result<Self> {
        let mean = vectors
            .mean_axis(Axis(0))
            .ok_or(Error::InsufficientSamples { needed: 1, found: 0 })?;
        Ok(Self { mean })
    }

    /// Rows minus the fitted mean, each scaled to unit norm (zero rows stay
    /// zero).
    pub fn apply(&self, vectors: &Array2<f64>) -> Result<Array2<f64>> {
        if vectors.ncols() != self.mean.len() {
            return Err(Error::shape(self.mean.len(), vectors.ncols()));
        }
        let mut out = vectors - &self.mean;
        for mut row in out.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        Ok(out)
    }
}

/// Random image with a `1 / |k|` amplitude spectrum (natural-image-like
/// statistics), rescaled to `[0, 1]`. Shape `(colors, height, width)`.
pub fn synthetic_image(colors: usize, height: usize, width: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fft = Fft2::new(height, width);
    let mut image = Array3::zeros((colors, height, width));
    for c in 0..colors {
        let noise = Array2::from_shape_fn((height, width), |_| Complex64::new(rng.sample(StandardNormal), 0.0));
        let mut spectrum = fft.forward(noise);
        for ((y, x), v) in spectrum.indexed_iter_mut() {
            let (fy, fx) = (centered(y, height), centered(x, width));
            let radius = (fy * fy + fx * fx).sqrt();
            *v = if radius == 0.0 { Complex64::new(0.0, 0.0) } else { *v / radius };
        }
        let field = fft.inverse(spectrum).mapv(|v| v.re);
        let (lo, hi) = field
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        image
            .index_axis_mut(Axis(0), c)
            .assign(&field.mapv(|v| (v - lo) / span));
    }
    image
}

/// Circular shift of every channel by `(dy, dx)` pixels.
pub fn roll_image(image: &Array3<f64>, dy: usize, dx: usize) -> Array3<f64> {
    let (c, h, w) = image.dim();
    Array3::from_shape_fn((c, h, w), |(k, y, x)| image[[k, (y + h - dy % h) % h, (x + w - dx % w) % w]])
}

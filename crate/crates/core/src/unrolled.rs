//! The generalized ISTC network as a differentiable program.
//!
//! Layer `n` computes `z_n = a_{n-1} + W^t (beta - D a_{n-1}) - lambda_n` and
//! `a_n = relu(z_n)` from `a_0 = 0`, with the geometric schedule from
//! `lambda_max` down to `lambda_star = exp(log_lambda_star)`. Gradients with
//! respect to `D`, `W` and `log_lambda_star` are computed by hand-written
//! reverse mode; `relu'(0)` is taken as 0. `lambda_max` never receives a
//! gradient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dictionary::{linf_norm, support_of, SparseCode};
use crate::error::{Error, Result};
use crate::prox::{default_lambda_max, layer_preactivation, make_schedule, relu};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMaxPolicy {
    Fixed(f64),
    /// `||W^t beta||_inf` per input (see [`default_lambda_max`]), treated as
    /// a constant by the backward pass.
    DataDependent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledParams {
    pub dictionary: Array2<f64>,
    /// `None` ties `W` to `D`.
    pub auxiliary: Option<Array2<f64>>,
    pub log_lambda_star: f64,
    pub lambda_max: LambdaMaxPolicy,
    pub n_layers: usize,
}

impl UnrolledParams {
    /// Random unit-norm Gaussian dictionary; an untied `W` starts equal to `D`.
    pub fn random(signal_dim: usize, atom_count: usize, n_layers: usize, lambda_star: f64, tied: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dictionary = Array2::from_shape_fn((signal_dim, atom_count), |_| rng.sample::<f64, _>(StandardNormal));
        normalize_in_place(&mut dictionary);
        Self {
            auxiliary: (!tied).then(|| dictionary.clone()),
            dictionary,
            log_lambda_star: lambda_star.ln(),
            lambda_max: LambdaMaxPolicy::DataDependent,
            n_layers,
        }
    }

    pub fn lambda_star(&self) -> f64 {
        self.log_lambda_star.exp()
    }

    pub fn is_tied(&self) -> bool {
        self.auxiliary.is_none()
    }

    pub fn auxiliary_view(&self) -> ArrayView2<'_, f64> {
        self.auxiliary.as_ref().unwrap_or(&self.dictionary).view()
    }

    pub fn signal_dim(&self) -> usize {
        self.dictionary.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.dictionary.ncols()
    }

    /// Projects back onto the constraint set: unit-norm atoms and
    /// `W_m^t D_m = 1`.
    pub fn renormalize(&mut self) -> Result<()> {
        normalize_in_place(&mut self.dictionary);
        if let Some(w) = self.auxiliary.as_mut() {
            for (m, mut col) in w.axis_iter_mut(Axis(1)).enumerate() {
                let pairing = col.dot(&self.dictionary.column(m));
                if pairing.abs() < 1e-300 {
                    return Err(Error::DegeneratePairing(m));
                }
                col.mapv_inplace(|v| v / pairing);
            }
        }
        Ok(())
    }

    fn lambda_max_for(&self, beta: ArrayView1<f64>) -> f64 {
        match self.lambda_max {
            LambdaMaxPolicy::Fixed(v) => v,
            LambdaMaxPolicy::DataDependent => {
                default_lambda_max(self.auxiliary_view().t().dot(&beta).view(), self.lambda_star())
            }
        }
    }
}

fn normalize_in_place(m: &mut Array2<f64>) {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub beta: Array1<f64>,
    pub lambda_max: f64,
    /// `lambda_1..lambda_N`
    pub thresholds: Vec<f64>,
    /// `d lambda_n / d log_lambda_star`
    threshold_sensitivity: Vec<f64>,
    /// `a_0..a_N`
    pub codes: Vec<Array1<f64>>,
    /// `z_1..z_N`
    pub preactivations: Vec<Array1<f64>>,
    /// `beta - D a_{n-1}` for `n = 1..N`
    residuals: Vec<Array1<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array1<f64> {
        self.codes.last().expect("a_0 is always present")
    }

    /// Smallest `|z_n(m)|` over all layers; small values mean the input sits
    /// near a ReLU kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.preactivations
            .iter()
            .flat_map(|z| z.iter())
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledGradients {
    pub dictionary: Array2<f64>,
    pub auxiliary: Option<Array2<f64>>,
    pub log_lambda_star: f64,
}

impl UnrolledGradients {
    pub fn zeros_like(params: &UnrolledParams) -> Self {
        Self {
            dictionary: Array2::zeros(params.dictionary.dim()),
            auxiliary: params.auxiliary.as_ref().map(|w| Array2::zeros(w.dim())),
            log_lambda_star: 0.0,
        }
    }

    fn add_assign(&mut self, other: &UnrolledGradients) {
        self.dictionary += &other.dictionary;
        if let (Some(a), Some(b)) = (self.auxiliary.as_mut(), other.auxiliary.as_ref()) {
            *a += b;
        }
        self.log_lambda_star += other.log_lambda_star;
    }

    fn scale(&mut self, factor: f64) {
        self.dictionary *= factor;
        if let Some(a) = self.auxiliary.as_mut() {
            *a *= factor;
        }
        self.log_lambda_star *= factor;
    }

    /// Flattened values in parameter order: `D`, then `W`, then
    /// `log_lambda_star`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.dictionary.iter().copied().collect();
        if let Some(w) = &self.auxiliary {
            out.extend(w.iter().copied());
        }
        out.push(self.log_lambda_star);
        out
    }
}

pub fn unrolled_forward(params: &UnrolledParams, beta: ArrayView1<f64>) -> Result<(SparseCode, ForwardCache)> {
    let (p, m) = params.dictionary.dim();
    if beta.len() != p {
        return Err(Error::shape(p, beta.len()));
    }
    if params.auxiliary_view().dim() != (p, m) {
        return Err(Error::shape(format!("{:?}", (p, m)), format!("{:?}", params.auxiliary_view().dim())));
    }
    let lambda_star = params.lambda_star();
    let lambda_max = params.lambda_max_for(beta);
    let mut cache = ForwardCache {
        beta: beta.to_owned(),
        lambda_max,
        thresholds: Vec::with_capacity(params.n_layers),
        threshold_sensitivity: Vec::with_capacity(params.n_layers),
        codes: vec![Array1::zeros(m)],
        preactivations: Vec::with_capacity(params.n_layers),
        residuals: Vec::with_capacity(params.n_layers),
    };
    if params.n_layers == 0 {
        return Ok((SparseCode::zeros(m), cache));
    }
    let schedule = make_schedule(lambda_max, lambda_star, params.n_layers)?;
    // lambda_max is a function of lambda_star only on the 2 lambda_star fallback
    let lambda_max_tracks_star = matches!(params.lambda_max, LambdaMaxPolicy::DataDependent)
        && linf_norm(params.auxiliary_view().t().dot(&beta).view()) <= lambda_star;
    let atoms = params.dictionary.view();
    let auxiliary = params.auxiliary_view();
    for n in 1..=params.n_layers {
        let lambda = schedule.threshold(n);
        let previous = cache.codes.last().expect("nonempty");
        let z = layer_preactivation(atoms, auxiliary, beta, previous, lambda);
        let residual = &beta - &atoms.dot(previous);
        let code = z.mapv(relu);
        let sensitivity = if lambda_max_tracks_star {
            lambda
        } else {
            lambda * n as f64 / params.n_layers as f64
        };
        cache.thresholds.push(lambda);
        cache.threshold_sensitivity.push(sensitivity);
        cache.residuals.push(residual);
        cache.preactivations.push(z);
        cache.codes.push(code);
    }
    let code = SparseCode::from_nonnegative(cache.output().clone());
    Ok((code, cache))
}

/// Reverse-mode derivative of the forward map, contracted with
/// `grad_wrt_code`. In tied mode the returned `dictionary` gradient sums
/// both the synthesis and the analysis roles of `D`.
pub fn unrolled_backward(
    cache: &ForwardCache,
    params: &UnrolledParams,
    grad_wrt_code: ArrayView1<f64>,
) -> Result<UnrolledGradients> {
    let (p, m) = params.dictionary.dim();
    if cache.preactivations.len() != params.n_layers || cache.codes.len() != params.n_layers + 1 {
        return Err(Error::CacheMismatch(format!(
            "cache has {} layers, params have {}",
            cache.preactivations.len(),
            params.n_layers
        )));
    }
    if cache.beta.len() != p || cache.codes[0].len() != m || grad_wrt_code.len() != m {
        return Err(Error::CacheMismatch(format!(
            "dimension mismatch: params {p}x{m}, beta {}, code {}, grad {}",
            cache.beta.len(),
            cache.codes[0].len(),
            grad_wrt_code.len()
        )));
    }
    let atoms = params.dictionary.view();
    let auxiliary = params.auxiliary_view();
    let mut d_synthesis = Array2::<f64>::zeros((p, m));
    let mut d_analysis = Array2::<f64>::zeros((p, m));
    let mut d_log_lambda = 0.0;
    let mut grad_code = grad_wrt_code.to_owned();
    for layer in (0..params.n_layers).rev() {
        let z = &cache.preactivations[layer];
        let grad_z: Array1<f64> = Array1::from_iter(
            grad_code
                .iter()
                .zip(z.iter())
                .map(|(&g, &zv)| if zv > 0.0 { g } else { 0.0 }),
        );
        // z = a + W^t r - lambda
        d_log_lambda -= grad_z.sum() * cache.threshold_sensitivity[layer];
        let residual = &cache.residuals[layer];
        outer_add(&mut d_analysis, residual.view(), grad_z.view());
        let grad_residual = auxiliary.dot(&grad_z);
        // r = beta - D a_{n-1}
        let previous = &cache.codes[layer];
        outer_add(&mut d_synthesis, grad_residual.view(), (-previous).view());
        grad_code = &grad_z - &atoms.t().dot(&grad_residual);
    }
    Ok(if params.is_tied() {
        UnrolledGradients {
            dictionary: d_synthesis + d_analysis,
            auxiliary: None,
            log_lambda_star: d_log_lambda,
        }
    } else {
        UnrolledGradients {
            dictionary: d_synthesis,
            auxiliary: Some(d_analysis),
            log_lambda_star: d_log_lambda,
        }
    })
}

fn outer_add(target: &mut Array2<f64>, left: ArrayView1<f64>, right: ArrayView1<f64>) {
    for (i, &l) in left.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        for (j, &r) in right.iter().enumerate() {
            target[[i, j]] += l * r;
        }
    }
}

/// Central differences of `loss` with respect to every scalar parameter,
/// in the same layout as [`unrolled_backward`].
pub fn finite_diff_gradient(
    loss: impl Fn(&UnrolledParams) -> f64,
    params: &UnrolledParams,
    step: f64,
) -> UnrolledGradients {
    let mut probe = params.clone();
    let central = |probe: &mut UnrolledParams, get: &dyn Fn(&mut UnrolledParams) -> &mut f64| {
        let original = *get(probe);
        *get(probe) = original + step;
        let plus = loss(probe);
        *get(probe) = original - step;
        let minus = loss(probe);
        *get(probe) = original;
        (plus - minus) / (2.0 * step)
    };
    let mut grads = UnrolledGradients::zeros_like(params);
    let (p, m) = params.dictionary.dim();
    for i in 0..p {
        for j in 0..m {
            grads.dictionary[[i, j]] = central(&mut probe, &|q| &mut q.dictionary[[i, j]]);
            if let Some(w) = grads.auxiliary.as_mut() {
                w[[i, j]] = central(&mut probe, &|q| &mut q.auxiliary.as_mut().expect("untied")[[i, j]]);
            }
        }
    }
    grads.log_lambda_star = central(&mut probe, &|q| &mut q.log_lambda_star);
    grads
}

/// Linear softmax head on the sparse code.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    /// `K x M`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ToyClassifier {
    pub fn random(classes: usize, code_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.01;
        Self {
            weights: Array2::from_shape_fn((classes, code_dim), |_| scale * rng.sample::<f64, _>(StandardNormal)),
            bias: Array1::zeros(classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn logits(&self, code: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&code) + &self.bias
    }

    pub fn predict(&self, code: ArrayView1<f64>) -> usize {
        argmax(self.logits(code).view())
    }

    /// Cross-entropy loss and softmax probabilities.
    pub fn loss(&self, code: ArrayView1<f64>, label: usize) -> (f64, Array1<f64>) {
        let logits = self.logits(code);
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp = logits.mapv(|v| (v - top).exp());
        let total = exp.sum();
        let probs = exp / total;
        (-(probs[label].max(f64::MIN_POSITIVE)).ln(), probs)
    }
}

fn argmax(v: ArrayView1<f64>) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSignal {
    pub signal: Array1<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub train: Vec<LabeledSignal>,
    pub validation: Vec<LabeledSignal>,
    pub classes: usize,
}

impl ToyDataset {
    /// Two classes; each signal is a positive combination of `s` atoms drawn
    /// from its class's half of a random `P x M` unit-norm dictionary, plus
    /// Gaussian noise of norm `noise`.
    pub fn two_class(
        signal_dim: usize,
        atom_count: usize,
        s: usize,
        n_train: usize,
        n_validation: usize,
        noise: f64,
        seed: u64,
    ) -> Result<Self> {
        let half = atom_count / 2;
        if half == 0 || s == 0 || s > half {
            return Err(Error::Config(format!("need 1 <= s <= M/2, got s = {s}, M = {atom_count}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut atoms = Array2::from_shape_fn((signal_dim, atom_count), |_| rng.sample::<f64, _>(StandardNormal));
        normalize_in_place(&mut atoms);
        let draw = |rng: &mut ChaCha8Rng, label: usize| {
            let offset = label * half;
            let picks = rand::seq::index::sample(rng, half, s);
            let mut signal = Array1::<f64>::zeros(signal_dim);
            for k in picks {
                let c: f64 = rng.random_range(0.5..1.5);
                signal.scaled_add(c, &atoms.column(offset + k));
            }
            if noise > 0.0 {
                let e = Array1::from_shape_fn(signal_dim, |_| rng.sample::<f64, _>(StandardNormal));
                let norm = e.dot(&e).sqrt();
                signal.scaled_add(noise / norm, &e);
            }
            LabeledSignal { signal, label }
        };
        let train = (0..n_train).map(|i| draw(&mut rng, i % 2)).collect();
        let validation = (0..n_validation).map(|i| draw(&mut rng, i % 2)).collect();
        Ok(Self {
            train,
            validation,
            classes: 2,
        })
    }

    /// Independently permutes the labels of both splits.
    pub fn shuffled_labels(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffle = |samples: &[LabeledSignal]| {
            let mut labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            labels.shuffle(&mut rng);
            samples
                .iter()
                .zip(labels)
                .map(|(s, label)| LabeledSignal {
                    signal: s.signal.clone(),
                    label,
                })
                .collect::<Vec<_>>()
        };
        Self {
            train: shuffle(&self.train),
            validation: shuffle(&self.validation),
            classes: self.classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub batch_size: usize,
    /// Rescales each averaged minibatch gradient (all parameters jointly)
    /// to at most this Euclidean norm.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.1,
            lr_milestones: vec![30, 45],
            lr_decay: 0.1,
            batch_size: 10,
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.lr_decay.powi(decays as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    /// Mean fraction of nonzero code entries over the validation split.
    pub mean_sparsity: f64,
    /// `max_m | ||D_m|| - 1 |` after the epoch's last projection.
    pub atom_norm_error: f64,
    /// `max_m | W_m^t D_m - 1 |` after the epoch's last projection.
    pub pairing_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: UnrolledParams,
    pub classifier: ToyClassifier,
    /// Number of completed epochs.
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub mean_sparsity: f64,
}

pub fn evaluate(state: &TrainState, samples: &[LabeledSignal]) -> Result<Evaluation> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut nonzero = 0usize;
    for sample in samples {
        let (code, _) = unrolled_forward(&state.params, sample.signal.view())?;
        let (l, _) = state.classifier.loss(code.values(), sample.label);
        loss += l;
        nonzero += code.support().len();
        if state.classifier.predict(code.values()) == sample.label {
            correct += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        mean_sparsity: nonzero as f64 / (n * state.params.atom_count() as f64),
    })
}

/// Runs one epoch of projected minibatch SGD over `(D, W, log lambda_star,
/// classifier)`. Minibatch gradients are averaged in sample order.
pub fn train_epoch(state: &mut TrainState, dataset: &ToyDataset, config: &TrainConfig) -> Result<EpochMetrics> {
    let epoch = state.epoch;
    let lr = config.learning_rate_at(epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    order.shuffle(&mut rng);
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for batch in order.chunks(config.batch_size.max(1)) {
        let mut grads = UnrolledGradients::zeros_like(&state.params);
        let mut grad_weights = Array2::<f64>::zeros(state.classifier.weights.dim());
        let mut grad_bias = Array1::<f64>::zeros(state.classifier.bias.len());
        for &i in batch {
            let sample = &dataset.train[i];
            let (code, cache) = unrolled_forward(&state.params, sample.signal.view())?;
            let (loss, mut probs) = state.classifier.loss(code.values(), sample.label);
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            total_loss += loss;
            if argmax(probs.view()) == sample.label {
                correct += 1;
            }
            probs[sample.label] -= 1.0;
            outer_add(&mut grad_weights, probs.view(), code.values());
            grad_bias += &probs;
            let grad_code = state.classifier.weights.t().dot(&probs);
            grads.add_assign(&unrolled_backward(&cache, &state.params, grad_code.view())?);
        }
        if lr > 0.0 {
            let mut scale = 1.0 / batch.len() as f64;
            if let Some(limit) = config.clip_norm {
                let norm = scale
                    * (grads.flatten().iter().map(|g| g * g).sum::<f64>()
                        + grad_weights.iter().map(|g| g * g).sum::<f64>()
                        + grad_bias.iter().map(|g| g * g).sum::<f64>())
                    .sqrt();
                if norm > limit {
                    scale *= limit / norm;
                }
            }
            let factor = -lr * scale;
            grads.scale(factor);
            state.params.dictionary += &grads.dictionary;
            if let (Some(w), Some(g)) = (state.params.auxiliary.as_mut(), grads.auxiliary.as_ref()) {
                *w += g;
            }
            state.params.log_lambda_star += grads.log_lambda_star;
            state.classifier.weights.scaled_add(factor, &grad_weights);
            state.classifier.bias.scaled_add(factor, &grad_bias);
            let finite = state.params.dictionary.iter().all(|v| v.is_finite())
                && state.params.auxiliary.iter().flatten().all(|v| v.is_finite())
                && state.params.log_lambda_star.is_finite()
                && state.classifier.weights.iter().all(|v| v.is_finite())
                && state.classifier.bias.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::DivergedLoss { epoch });
            }
            state.params.renormalize().map_err(|e| match e {
                Error::DegeneratePairing(_) => Error::DivergedLoss { epoch },
                other => other,
            })?;
        }
    }
    state.epoch += 1;
    let validation = evaluate(state, &dataset.validation)?;
    let n = dataset.train.len().max(1) as f64;
    let (atom_norm_error, pairing_error) = constraint_errors(&state.params);
    Ok(EpochMetrics {
        epoch: state.epoch,
        train_loss: total_loss / n,
        train_accuracy: correct as f64 / n,
        validation_accuracy: validation.accuracy,
        mean_sparsity: validation.mean_sparsity,
        atom_norm_error,
        pairing_error,
    })
}

/// Deviation from the two normalizations maintained by training.
pub fn constraint_errors(params: &UnrolledParams) -> (f64, f64) {
    let d = &params.dictionary;
    let norm_error = d
        .axis_iter(Axis(1))
        .map(|c| (c.dot(&c).sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    let w = params.auxiliary_view();
    let pairing_error = (0..d.ncols())
        .map(|m| (w.column(m).dot(&d.column(m)) - 1.0).abs())
        .fold(0.0, f64::max);
    (norm_error, pairing_error)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub state: TrainState,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains for `config.epochs` epochs from the given parameters.
pub fn train_toy(
    dataset: &ToyDataset,
    params: UnrolledParams,
    classifier: ToyClassifier,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if dataset.classes < 2 || classifier.classes() != dataset.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, classifier {}",
            dataset.classes,
            classifier.classes()
        )));
    }
    let mut state = TrainState {
        params,
        classifier,
        epoch: 0,
    };
    let mut metrics = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        metrics.push(train_epoch(&mut state, dataset, config)?);
    }
    Ok(TrainedModel { state, metrics })
}

/// Mean nonzero fraction of codes over `samples` at a given `lambda_star`.
pub fn sparsity_at(params: &UnrolledParams, samples: &[LabeledSignal], lambda_star: f64) -> Result<f64> {
    let mut probe = params.clone();
    probe.log_lambda_star = lambda_star.ln();
    let mut nonzero = 0usize;
    for s in samples {
        let (_, cache) = unrolled_forward(&probe, s.signal.view())?;
        nonzero += support_of(cache.output().view()).len();
    }
    Ok(nonzero as f64 / (samples.len().max(1) * params.atom_count()) as f64)
}

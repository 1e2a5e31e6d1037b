//! MSE + Adam training for the dense classifier, and the three compression
//! ablations: magnitude pruning with retraining, knowledge distillation into
//! a 61→4→4 student, and bias-free training.
//!
//! Gradients are analytic backpropagation through the fixed stack of dense
//! layers. Parameters are handled as one flat vector in
//! [`DenseModel::params`] order (per layer: weights row-major, then biases).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{Beat, BeatSet};
use crate::metrics::{self, EvalReport};
use crate::nn::{self, Activation, DenseModel, Variant, STANDARD_SHAPE};
use crate::par::{self, Execution};
use crate::{Class, Error, Result};

/// How "batch size per epoch" is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// One optimizer step per epoch on a fresh random batch.
    SingleStep,
    /// A full shuffled pass over the training set in batch-sized steps.
    FullPass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub batch_mode: BatchMode,
    #[serde(skip, default)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10_000,
            learning_rate: 0.001,
            batch_size: 1024,
            seed: 0,
            variant: Variant::SigmoidSigmoid,
            batch_mode: BatchMode::SingleStep,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean batch loss per epoch.
    pub loss: Vec<f64>,
    pub train_accuracy: f64,
    pub train_macro_f1: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in self.loss.iter().enumerate() {
            let _ = writeln!(s, "{},{l}", i + 1);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Entries with `frozen[i] == true` are left
/// untouched.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    frozen: Option<&[bool]>,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || frozen.is_some_and(|f| f.len() != n) {
        return Err(Error::shape(format!("{n} parameters"), grads.len()));
    }
    state.t += 1;
    let c1 = 1.0 - state.beta1.powi(state.t as i32);
    let c2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..n {
        if frozen.is_some_and(|f| f[i]) {
            continue;
        }
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Mean over all elements of the squared differences.
pub fn mse_loss<P: AsRef<[f64]>, T: AsRef<[f64]>>(predicted: &[P], target: &[T]) -> Result<f64> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(Error::shape(format!("{} targets", predicted.len()), target.len()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in predicted.iter().zip(target) {
        let (p, t) = (p.as_ref(), t.as_ref());
        if p.len() != t.len() {
            return Err(Error::shape(format!("target of length {}", p.len()), t.len()));
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += p.len();
    }
    Ok(sum / count as f64)
}

/// Kullback-Leibler divergence `KL(p ‖ q)` with `0 · ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// Categorical cross-entropy of `probs` against a class label.
pub fn cross_entropy(probs: &[f64], class: usize) -> f64 {
    -probs[class].max(f64::MIN_POSITIVE).ln()
}

struct Cache {
    /// Input to each layer, then the final output.
    acts: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pres: Vec<Vec<f64>>,
}

fn forward_cached(model: &DenseModel, x: &[f64]) -> Result<Cache> {
    let mut acts = vec![x.to_vec()];
    let mut pres = Vec::with_capacity(model.layers().len());
    for l in model.layers() {
        let z = l.affine(acts.last().expect("non-empty"))?;
        acts.push(l.activation.apply(&z));
        pres.push(z);
    }
    Ok(Cache { acts, pres })
}

/// Pulls `d_out` (gradient w.r.t. the activation output) back through the
/// activation.
fn activation_backward(act: Activation, z: &[f64], a: &[f64], d_out: &[f64]) -> Vec<f64> {
    match act {
        Activation::Sigmoid => a
            .iter()
            .zip(d_out)
            .map(|(a, d)| d * a * (1.0 - a))
            .collect(),
        Activation::Relu => z
            .iter()
            .zip(d_out)
            .map(|(z, d)| if *z > 0.0 { *d } else { 0.0 })
            .collect(),
        Activation::Softmax => {
            let dot: f64 = a.iter().zip(d_out).map(|(a, d)| a * d).sum();
            a.iter().zip(d_out).map(|(a, d)| a * (d - dot)).collect()
        }
    }
}

/// Accumulates parameter gradients given the gradient w.r.t. the last
/// layer's pre-activation.
fn backprop(model: &DenseModel, cache: &Cache, mut dz: Vec<f64>, grad: &mut [f64]) {
    let layers = model.layers();
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for l in layers {
        offsets.push(off);
        off += l.param_count();
    }
    for li in (0..layers.len()).rev() {
        let l = &layers[li];
        let x = &cache.acts[li];
        let g = &mut grad[offsets[li]..offsets[li] + l.param_count()];
        let (gw, gb) = g.split_at_mut(l.weights.len());
        for (i, xi) in x.iter().enumerate() {
            let row = &mut gw[i * l.fan_out..(i + 1) * l.fan_out];
            for (gwij, dzj) in row.iter_mut().zip(&dz) {
                *gwij += xi * dzj;
            }
        }
        for (b, d) in gb.iter_mut().zip(&dz) {
            *b += d;
        }
        if li == 0 {
            break;
        }
        let dx: Vec<f64> = l
            .weights
            .chunks_exact(l.fan_out)
            .map(|row| row.iter().zip(&dz).map(|(w, d)| w * d).sum())
            .collect();
        let prev = &layers[li - 1];
        dz = activation_backward(prev.activation, &cache.pres[li - 1], &cache.acts[li], &dx);
    }
}

/// Per-sample loss and the gradient it sends into the output pre-activation.
trait SampleLoss: Sync {
    fn eval(&self, cache: &Cache, model: &DenseModel, sample: usize) -> (f64, Vec<f64>);
}

struct Mse<'a> {
    targets: &'a [[f64; 4]],
    /// Elements in the whole batch.
    scale: f64,
}

impl SampleLoss for Mse<'_> {
    fn eval(&self, cache: &Cache, model: &DenseModel, sample: usize) -> (f64, Vec<f64>) {
        let out = cache.acts.last().expect("output");
        let t = &self.targets[sample];
        let mut loss = 0.0;
        let d_out: Vec<f64> = out
            .iter()
            .zip(t)
            .map(|(y, t)| {
                loss += (y - t) * (y - t);
                2.0 * (y - t) / self.scale
            })
            .collect();
        let last = model.layers().last().expect("layer");
        let z = cache.pres.last().expect("pre");
        (loss / self.scale, activation_backward(last.activation, z, out, &d_out))
    }
}

/// Sums `loss` and its gradient over `inputs` with fixed chunking.
fn batch_gradient<L: SampleLoss>(
    model: &DenseModel,
    inputs: &[&[f64]],
    loss: &L,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    let n_params = model.param_count();
    let ids: Vec<usize> = (0..inputs.len()).collect();
    let parts = par::map_chunks(&ids, par::DEFAULT_CHUNK, exec, |chunk: &[usize]| {
        let mut grad = vec![0.0; n_params];
        let mut total = 0.0;
        for &i in chunk {
            let cache = forward_cached(model, inputs[i])?;
            let (l, dz) = loss.eval(&cache, model, i);
            total += l;
            backprop(model, &cache, dz, &mut grad);
        }
        Ok::<_, Error>((total, grad))
    });
    let mut grad = vec![0.0; n_params];
    let mut total = 0.0;
    for part in parts {
        let (l, g) = part?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Mean-squared-error loss of `model` on a batch and its exact gradient.
pub fn backward(
    model: &DenseModel,
    inputs: &[&[f64]],
    targets: &[[f64; 4]],
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::shape(format!("{} targets", inputs.len()), targets.len()));
    }
    if model.output_len() != 4 {
        return Err(Error::shape("4 outputs", model.output_len()));
    }
    let loss = Mse {
        targets,
        scale: (inputs.len() * 4) as f64,
    };
    batch_gradient(model, inputs, &loss, exec)
}

fn flat_params(model: &DenseModel) -> Vec<f64> {
    model.params().collect()
}

fn load_params(model: &mut DenseModel, flat: &[f64]) {
    for (p, v) in model.params_mut().zip(flat) {
        *p = *v;
    }
}

/// Mask marking every bias as frozen.
fn bias_mask(model: &DenseModel) -> Vec<bool> {
    model
        .layers()
        .iter()
        .flat_map(|l| {
            std::iter::repeat_n(false, l.weights.len()).chain(std::iter::repeat_n(true, l.bias.len()))
        })
        .collect()
}

fn warn_empty_classes(train: &BeatSet) {
    for (c, n) in Class::ALL.iter().zip(train.counts()) {
        if n == 0 {
            log::warn!("class {c} has no training beats");
        }
    }
}

/// Batches of sample indices for one epoch.
fn epoch_batches(n: usize, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    match config.batch_mode {
        BatchMode::SingleStep => {
            let k = config.batch_size.min(n);
            vec![index::sample(rng, n, k).into_vec()]
        }
        BatchMode::FullPass => {
            let order = index::sample(rng, n, n).into_vec();
            order
                .chunks(config.batch_size)
                .map(<[usize]>::to_vec)
                .collect()
        }
    }
}

/// Shared optimization loop. `step_loss` computes (loss, grad) for a list of
/// sample indices.
fn optimize<F>(
    model: &mut DenseModel,
    n_samples: usize,
    config: &TrainConfig,
    lr: f64,
    frozen: Option<&[bool]>,
    rng: &mut ChaCha8Rng,
    mut step_loss: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&DenseModel, &[usize]) -> Result<(f64, Vec<f64>)>,
{
    let mut params = flat_params(model);
    let mut adam = AdamState::new(params.len());
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let batches = epoch_batches(n_samples, config, rng);
        let mut epoch_loss = 0.0;
        for batch in &batches {
            let (loss, grad) = step_loss(model, batch)?;
            if !loss.is_finite() {
                return Err(Error::Config(format!("training diverged: loss {loss}")));
            }
            epoch_loss += loss;
            adam_step(&mut params, &grad, &mut adam, lr, frozen)?;
            load_params(model, &params);
        }
        losses.push(epoch_loss / batches.len() as f64);
    }
    Ok(losses)
}

fn mse_step(
    train: &BeatSet,
    exec: Execution,
) -> impl FnMut(&DenseModel, &[usize]) -> Result<(f64, Vec<f64>)> + '_ {
    move |model, batch| {
        let inputs: Vec<&[f64]> = batch.iter().map(|&i| train.beats[i].window()).collect();
        let targets: Vec<[f64; 4]> = batch.iter().map(|&i| train.beats[i].label.one_hot()).collect();
        backward(model, &inputs, &targets, exec)
    }
}

pub fn evaluate_model(model: &DenseModel, beats: &BeatSet, exec: Execution) -> Result<EvalReport> {
    metrics::evaluate(beats, exec, |w| nn::predict(model, w))
}

fn finish_trace(
    model: &DenseModel,
    loss: Vec<f64>,
    train: &BeatSet,
    test: &BeatSet,
    exec: Execution,
) -> Result<TrainTrace> {
    let tr = evaluate_model(model, train, exec)?;
    let (test_accuracy, test_macro_f1) = if test.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let te = evaluate_model(model, test, exec)?;
        (te.accuracy, te.macro_avg.f1)
    };
    Ok(TrainTrace {
        loss,
        train_accuracy: tr.accuracy,
        train_macro_f1: tr.macro_avg.f1,
        test_accuracy,
        test_macro_f1,
    })
}

fn fit_inner(
    train: &BeatSet,
    test: &BeatSet,
    config: &TrainConfig,
    weights_only: bool,
) -> Result<(DenseModel, TrainTrace)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    warn_empty_classes(train);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = DenseModel::glorot(config.variant, STANDARD_SHAPE, &mut rng);
    let frozen = weights_only.then(|| bias_mask(&model));
    let loss = optimize(
        &mut model,
        train.len(),
        config,
        config.learning_rate,
        frozen.as_deref(),
        &mut rng,
        mse_step(train, config.execution),
    )?;
    let trace = finish_trace(&model, loss, train, test, config.execution)?;
    Ok((model, trace))
}

/// Trains a fresh 61→10→4 model of `config.variant`.
pub fn fit(train: &BeatSet, test: &BeatSet, config: &TrainConfig) -> Result<(DenseModel, TrainTrace)> {
    fit_inner(train, test, config, false)
}

/// As [`fit`], with every bias held at zero.
pub fn fit_weights_only(
    train: &BeatSet,
    test: &BeatSet,
    config: &TrainConfig,
) -> Result<(DenseModel, TrainTrace)> {
    fit_inner(train, test, config, true)
}

/// Zeroes the smaller-magnitude half of every parameter group (each layer's
/// weights and biases separately). Returns the mask of pruned entries in
/// flat parameter order.
pub fn prune_half(model: &mut DenseModel) -> Vec<bool> {
    let mut mask = Vec::with_capacity(model.param_count());
    for layer in model.layers_mut() {
        for group in [&mut layer.weights, &mut layer.bias] {
            let mut order: Vec<usize> = (0..group.len()).collect();
            order.sort_by(|&a, &b| group[a].abs().total_cmp(&group[b].abs()));
            let mut pruned = vec![false; group.len()];
            for &i in &order[..group.len() / 2] {
                group[i] = 0.0;
                pruned[i] = true;
            }
            mask.extend(pruned);
        }
    }
    mask
}

/// One-shot magnitude pruning followed by retraining at 1/100 of the
/// configured learning rate with the pruned entries frozen at zero.
pub fn prune_and_retrain(model: &DenseModel, train: &BeatSet, config: &TrainConfig) -> Result<DenseModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    let mut pruned = model.clone();
    let mask = prune_half(&mut pruned);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    optimize(
        &mut pruned,
        train.len(),
        config,
        config.learning_rate / 100.0,
        Some(&mask),
        &mut rng,
        mse_step(train, config.execution),
    )?;
    Ok(pruned)
}

/// Distillation hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Weight of the KL term on temperature-softened outputs.
    pub soft_weight: f64,
    /// Weight of the cross-entropy term on hard labels.
    pub hard_weight: f64,
    pub hidden: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 10.0,
            soft_weight: 0.9,
            hard_weight: 0.1,
            hidden: 4,
        }
    }
}

fn scaled_softmax(z: &[f64], t: f64) -> Vec<f64> {
    nn::softmax(&z.iter().map(|v| v / t).collect::<Vec<_>>())
}

struct Distillation<'a> {
    teacher_soft: &'a [Vec<f64>],
    labels: &'a [usize],
    cfg: DistillConfig,
    batch: f64,
}

impl SampleLoss for Distillation<'_> {
    fn eval(&self, cache: &Cache, _model: &DenseModel, sample: usize) -> (f64, Vec<f64>) {
        let z = cache.pres.last().expect("pre");
        let t = self.cfg.temperature;
        let p = &self.teacher_soft[sample];
        let q = scaled_softmax(z, t);
        let hard = nn::softmax(z);
        let label = self.labels[sample];
        let loss = (self.cfg.soft_weight * kl_divergence(p, &q)
            + self.cfg.hard_weight * cross_entropy(&hard, label))
            / self.batch;
        let dz = (0..z.len())
            .map(|j| {
                let soft = (q[j] - p[j]) / t;
                let onehot = if j == label { 1.0 } else { 0.0 };
                (self.cfg.soft_weight * soft + self.cfg.hard_weight * (hard[j] - onehot)) / self.batch
            })
            .collect();
        (loss, dz)
    }
}

/// Distillation loss of `student` against precomputed teacher soft targets,
/// with its gradient.
fn distill_gradient(
    student: &DenseModel,
    inputs: &[&[f64]],
    teacher_soft: &[Vec<f64>],
    labels: &[usize],
    cfg: DistillConfig,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    let loss = Distillation {
        teacher_soft,
        labels,
        cfg,
        batch: inputs.len() as f64,
    };
    batch_gradient(student, inputs, &loss, exec)
}

/// Output-layer pre-activation of `model`.
pub fn logits(model: &DenseModel, x: &[f64]) -> Result<Vec<f64>> {
    let cache = forward_cached(model, x)?;
    Ok(cache.pres.last().expect("pre").clone())
}

/// Trains a small student (61→`hidden`→4, same activations as the teacher) on
/// a weighted sum of KL divergence to the teacher's temperature-softened
/// outputs and cross-entropy to the hard labels.
pub fn distill_with(
    teacher: &DenseModel,
    train: &BeatSet,
    config: &TrainConfig,
    cfg: DistillConfig,
) -> Result<DenseModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    let variant = teacher
        .variant()
        .ok_or_else(|| Error::Config("teacher must be a two-layer model".into()))?;
    let shape = [teacher.input_len(), cfg.hidden, teacher.output_len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut student = DenseModel::glorot(variant, shape, &mut rng);

    let soft_all: Vec<Vec<f64>> = par::map_items(&train.beats, config.execution, |b: &Beat| {
        logits(teacher, b.window()).map(|z| scaled_softmax(&z, cfg.temperature))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let exec = config.execution;
    optimize(
        &mut student,
        train.len(),
        config,
        config.learning_rate,
        None,
        &mut rng,
        |m, batch| {
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| train.beats[i].window()).collect();
            let soft: Vec<Vec<f64>> = batch.iter().map(|&i| soft_all[i].clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.beats[i].label.index()).collect();
            distill_gradient(m, &inputs, &soft, &labels, cfg, exec)
        },
    )?;
    Ok(student)
}

pub fn distill(teacher: &DenseModel, train: &BeatSet, config: &TrainConfig) -> Result<DenseModel> {
    distill_with(teacher, train, config, DistillConfig::default())
}
